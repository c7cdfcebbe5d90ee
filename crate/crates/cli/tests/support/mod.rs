//! A server on an ephemeral port and an oracle client that drives it.

#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use prepal_cli::server::{serve, AppState};
use prepal_core::dataset::DatasetManifest;
use prepal_core::protocol::{RunRecord, SessionConfig};
use serde_json::{json, Value};

pub struct Server {
    pub base: String,
    pub client: reqwest::Client,
    task: tokio::task::JoinHandle<()>,
}

impl Server {
    pub async fn start(root: &Path) -> Self {
        let state: Arc<AppState> = AppState::open(root).unwrap();
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let task = tokio::spawn(async move {
            serve(listener, state).await.unwrap();
        });
        Self {
            base,
            client: reqwest::Client::new(),
            task,
        }
    }

    pub fn stop(self) {
        self.task.abort();
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub async fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let resp = self.client.post(self.url(path)).json(&body).send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    pub async fn get(&self, path: &str) -> (u16, Value) {
        let resp = self.client.get(self.url(path)).send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    pub async fn get_text(&self, path: &str) -> (u16, String) {
        let resp = self.client.get(self.url(path)).send().await.unwrap();
        (resp.status().as_u16(), resp.text().await.unwrap())
    }

    pub async fn register(&self, name: &str, embeddings: &Path, manifest: &Path) -> Value {
        let (status, body) = self
            .post(
                "/datasets",
                json!({ "name": name, "embeddings": embeddings, "manifest": manifest }),
            )
            .await;
        assert!(status == 201 || status == 200, "{status} {body}");
        body
    }

    pub async fn create(&self, dataset: &str, config: &SessionConfig) -> String {
        let (status, body) = self
            .post("/sessions", json!({ "dataset": dataset, "config": config }))
            .await;
        assert_eq!(status, 201, "{body}");
        body["id"].as_str().unwrap().to_string()
    }

    /// Polls until the session has a batch (or is done).
    pub async fn wait_for_query(&self, id: &str) -> Value {
        loop {
            let (status, body) = self.get(&format!("/sessions/{id}/query")).await;
            match status {
                200 => return body,
                202 => {
                    assert!(body["error"].is_null(), "{body}");
                    tokio::time::sleep(Duration::from_millis(5)).await;
                }
                _ => panic!("{status} {body}"),
            }
        }
    }

    /// Answers every query with the manifest's labels and returns the
    /// exported record.
    pub async fn drive_oracle(&self, id: &str, manifest: &DatasetManifest, wait: bool) -> RunRecord {
        loop {
            let query = self.wait_for_query(id).await;
            if query["status"] == "complete" {
                break;
            }
            let labels: serde_json::Map<String, Value> = query["remaining"]
                .as_array()
                .unwrap()
                .iter()
                .map(|i| {
                    let i = i.as_u64().unwrap() as usize;
                    (i.to_string(), json!(manifest.labels[i].unwrap()))
                })
                .collect();
            let path = format!("/sessions/{id}/labels?wait={wait}");
            let (status, body) = self.post(&path, Value::Object(labels)).await;
            assert_eq!(status, 200, "{body}");
        }
        let (status, text) = self.get_text(&format!("/sessions/{id}/export")).await;
        assert_eq!(status, 200, "{text}");
        RunRecord::from_json(&text).unwrap()
    }
}
