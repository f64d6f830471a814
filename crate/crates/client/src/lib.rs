//! Async client for `opp-service`.

use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;

use opp_core::api::{
    ApiError, BuiltinProgram, CalibrateRequest, CreateSessionRequest, GenTraceRequest, GenTraceResponse,
    PacketsRequest, PacketsResponse, RunRequest, RunResponse, SessionInfo, ValidateRequest, ValidateResponse,
};
use opp_core::calibrate::CalibrationReport;
use opp_core::stats::RunStats;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("server replied {status}: {error}")]
    Api { status: StatusCode, error: ApiError },
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base_url` such as `http://127.0.0.1:8080`.
    pub fn new(base_url: impl Into<String>) -> Self {
        let base = base_url.into().trim_end_matches('/').to_string();
        Client {
            base,
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn send<B: Serialize + ?Sized>(
        &self,
        method: Method,
        path: &str,
        body: Option<&B>,
    ) -> Result<reqwest::Response, ClientError> {
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().await?;
        let error = serde_json::from_str::<ApiError>(&text).unwrap_or_else(|_| {
            ApiError::new(
                opp_core::api::ErrorKind::Internal,
                if text.is_empty() { status.to_string() } else { text },
            )
        });
        Err(ClientError::Api { status, error })
    }

    async fn json<B: Serialize + ?Sized, T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: Option<&B>,
    ) -> Result<T, ClientError> {
        Ok(self.send(method, path, body).await?.json().await?)
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        self.json::<(), T>(Method::GET, path, None).await
    }

    async fn post<B: Serialize + ?Sized, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        self.json(Method::POST, path, Some(body)).await
    }

    pub async fn health(&self) -> Result<String, ClientError> {
        self.get("/health").await
    }

    pub async fn programs(&self) -> Result<Vec<String>, ClientError> {
        self.get("/programs").await
    }

    pub async fn program(&self, name: &str) -> Result<BuiltinProgram, ClientError> {
        self.get(&format!("/programs/{name}")).await
    }

    pub async fn validate(&self, req: &ValidateRequest) -> Result<ValidateResponse, ClientError> {
        self.post("/validate", req).await
    }

    pub async fn run(&self, req: &RunRequest) -> Result<RunResponse, ClientError> {
        self.post("/run", req).await
    }

    pub async fn gen_trace(&self, req: &GenTraceRequest) -> Result<GenTraceResponse, ClientError> {
        self.post("/gen-trace", req).await
    }

    pub async fn calibrate(&self, req: &CalibrateRequest) -> Result<CalibrationReport, ClientError> {
        self.post("/calibrate", req).await
    }

    pub async fn create_session(&self, req: &CreateSessionRequest) -> Result<SessionInfo, ClientError> {
        self.post("/sessions", req).await
    }

    pub async fn session(&self, id: &str) -> Result<SessionInfo, ClientError> {
        self.get(&format!("/sessions/{id}")).await
    }

    pub async fn feed(&self, id: &str, trace_csv: impl Into<String>) -> Result<PacketsResponse, ClientError> {
        let req = PacketsRequest {
            trace_csv: trace_csv.into(),
        };
        self.post(&format!("/sessions/{id}/packets"), &req).await
    }

    pub async fn session_stats(&self, id: &str) -> Result<RunStats, ClientError> {
        self.get(&format!("/sessions/{id}/stats")).await
    }

    pub async fn delete_session(&self, id: &str) -> Result<(), ClientError> {
        self.send::<()>(Method::DELETE, &format!("/sessions/{id}"), None)
            .await?;
        Ok(())
    }
}
