use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use image::RgbImage;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::protocol::*;
use super::{
    Cutout, DetectQuery, Detector, OutpaintQuery, Outpainter, RenderQuery, Renderer, Result, Segmenter, ServiceError,
    Vqa, VqaQuery,
};
use crate::metrics::Detection;
use crate::raster::{self, BinaryMask};

fn default_timeout_ms() -> u64 {
    120_000
}

fn default_attempts() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    1_000
}

fn default_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceEndpoint {
    pub url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    /// First retry delay; doubles on every further attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token: Option<String>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

impl ServiceEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            timeout_ms: default_timeout_ms(),
            max_attempts: default_attempts(),
            backoff_ms: default_backoff_ms(),
            auth_token: None,
            max_in_flight: default_in_flight(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout_ms == 0 || self.max_attempts == 0 || self.max_in_flight == 0 {
            return Err(ServiceError::Range(format!("endpoint {}: timeout, attempts and in-flight limit must be > 0", self.url)));
        }
        Ok(())
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("gate lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate lock");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock") += 1;
        self.0.cv.notify_one();
    }
}

static CLIENT_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Blocking client for one model endpoint. Shareable across threads.
#[derive(Debug)]
pub struct HttpService {
    endpoint: ServiceEndpoint,
    client: reqwest::blocking::Client,
    gate: Gate,
    prefix: String,
    next_id: AtomicU64,
}

impl HttpService {
    pub fn new(endpoint: ServiceEndpoint) -> Result<Self> {
        endpoint.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(endpoint.timeout_ms))
            .build()
            .map_err(|e| ServiceError::Unavailable(e.to_string()))?;
        let prefix = format!("{}-{}", std::process::id(), CLIENT_COUNTER.fetch_add(1, Ordering::Relaxed));
        Ok(Self { gate: Gate::new(endpoint.max_in_flight), endpoint, client, prefix, next_id: AtomicU64::new(0) })
    }

    pub fn endpoint(&self) -> &ServiceEndpoint {
        &self.endpoint
    }

    fn request_id(&self) -> String {
        format!("{}-{}", self.prefix, self.next_id.fetch_add(1, Ordering::Relaxed))
    }

    fn post<Req: Serialize, Resp: DeserializeOwned + Echo>(&self, path: &str, req: Req, id: &str) -> Result<Resp> {
        let url = format!("{}{}", self.endpoint.url.trim_end_matches('/'), path);
        let _permit = self.gate.acquire();
        let mut delay = self.endpoint.backoff_ms;
        let mut attempt = 1;
        loop {
            match self.send_once::<Req, Resp>(&url, &req) {
                Ok(resp) if resp.request_id() == id => return Ok(resp),
                Ok(resp) => {
                    return Err(ServiceError::Protocol(format!("response id {:?} does not echo {id:?}", resp.request_id())))
                }
                Err(e @ (ServiceError::Unavailable(_) | ServiceError::Timeout(_))) if attempt < self.endpoint.max_attempts => {
                    log::warn!("{url}: attempt {attempt} failed ({e}), retrying in {delay} ms");
                    std::thread::sleep(Duration::from_millis(delay));
                    delay = delay.saturating_mul(2);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn send_once<Req: Serialize, Resp: DeserializeOwned>(&self, url: &str, req: &Req) -> Result<Resp> {
        let mut builder = self.client.post(url).json(req);
        if let Some(token) = &self.endpoint.auth_token {
            builder = builder.bearer_auth(token);
        }
        let resp = builder.send().map_err(|e| {
            if e.is_timeout() {
                ServiceError::Timeout(self.endpoint.timeout_ms)
            } else {
                ServiceError::Unavailable(format!("{url}: {e}"))
            }
        })?;
        let status = resp.status();
        if status.is_success() {
            return resp.json::<Resp>().map_err(|e| ServiceError::Protocol(format!("{url}: {e}")));
        }
        let text = resp.text().unwrap_or_default();
        let body: ErrorBody =
            serde_json::from_str(&text).unwrap_or(ErrorBody { code: "unknown".into(), message: text });
        if status.is_server_error() {
            return Err(ServiceError::Unavailable(format!("{url}: {status} {}: {}", body.code, body.message)));
        }
        Err(match body.code.as_str() {
            "range_error" => ServiceError::Range(body.message),
            "empty_mask" => ServiceError::EmptyMask,
            "protocol_error" => ServiceError::Protocol(body.message),
            _ => ServiceError::Rejected { status: status.as_u16(), code: body.code, message: body.message },
        })
    }
}

impl Renderer for HttpService {
    fn render(&self, q: &RenderQuery) -> Result<Cutout> {
        let id = self.request_id();
        let resp: RenderResponse = self.post(RENDER_PATH, RenderRequest::from_query(id.clone(), q), &id)?;
        resp.to_cutout()
    }
}

impl Outpainter for HttpService {
    fn outpaint(&self, q: &OutpaintQuery<'_>) -> Result<RgbImage> {
        let id = self.request_id();
        let resp: OutpaintResponse = self.post(OUTPAINT_PATH, OutpaintRequest::from_query(id.clone(), q), &id)?;
        Ok(raster::rgb_from_b64(&resp.image_png_b64)?)
    }
}

impl Segmenter for HttpService {
    fn segment(&self, image: &RgbImage, point: (u32, u32)) -> Result<BinaryMask> {
        let id = self.request_id();
        let req = SegmentRequest { request_id: id.clone(), image_png_b64: raster::rgb_to_b64(image), point: [point.0, point.1] };
        let resp: SegmentResponse = self.post(SEGMENT_PATH, req, &id)?;
        Ok(raster::mask_from_b64(&resp.mask_png_b64)?)
    }
}

impl Detector for HttpService {
    fn detect(&self, q: &DetectQuery<'_>) -> Result<Vec<Detection>> {
        let id = self.request_id();
        let resp: DetectResponse = self.post(DETECT_PATH, DetectRequest::from_query(id.clone(), q), &id)?;
        if let Some(bad) = resp.detections.iter().find(|d| !d.is_valid()) {
            return Err(ServiceError::Protocol(format!("invalid detection {bad:?}")));
        }
        Ok(resp.detections)
    }
}

impl Vqa for HttpService {
    fn answer(&self, q: &VqaQuery<'_>) -> Result<String> {
        let id = self.request_id();
        let resp: VqaResponse = self.post(VQA_PATH, VqaRequest::from_query(id.clone(), q), &id)?;
        Ok(resp.answer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn gate_bounds_concurrency() {
        let gate = Arc::new(Gate::new(2));
        let active = Arc::new(AtomicU64::new(0));
        let peak = Arc::new(AtomicU64::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (gate, active, peak) = (gate.clone(), active.clone(), peak.clone());
                std::thread::spawn(move || {
                    let _p = gate.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    active.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn unreachable_endpoint_is_unavailable_after_retries() {
        // port 9 (discard) is closed on test machines; connection is refused immediately
        let ep = ServiceEndpoint { backoff_ms: 1, max_attempts: 2, ..ServiceEndpoint::new("http://127.0.0.1:9") };
        let svc = HttpService::new(ep).unwrap();
        let err = svc.segment(&RgbImage::new(2, 2), (0, 0)).unwrap_err();
        assert!(matches!(err, ServiceError::Unavailable(_)), "{err}");
    }

    #[test]
    fn endpoint_defaults() {
        let ep: ServiceEndpoint = serde_json::from_str(r#"{"url":"http://x"}"#).unwrap();
        assert_eq!((ep.timeout_ms, ep.max_attempts, ep.backoff_ms, ep.max_in_flight), (120_000, 3, 1_000, 4));
        assert!(HttpService::new(ServiceEndpoint { max_in_flight: 0, ..ep }).is_err());
    }
}
