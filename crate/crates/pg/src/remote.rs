//! HTTP clients for an external grounding model and segmentation model.
//!
//! `POST <endpoint>/ground` with `{"image_png_b64","prompt","query_id"}`
//! answers `{"text": "[x1,y1,x2,y2]"}`. `POST <endpoint>/segment` with
//! `{"image_png_b64","box":[x1,y1,x2,y2]}` answers `{"mask_png_b64"}` where
//! nonzero pixels belong to the mask.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use pg_core::aggregation::{AggError, MaskProvider};
use pg_core::geom::PixelBox;
use pg_core::grounder::{
    build_prompt, digit_box_from_values, parse_box_text, GroundError, Grounder, GroundingQuery, PredictionSource,
    ViewPrediction,
};
use pg_core::panorama::PanoramaBundle;
use serde::{Deserialize, Serialize};

use crate::config::RemoteConfig;
use crate::raster::{decode_png, encode_png};

/// Counting semaphore bounding concurrent requests.
struct Inflight {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Inflight {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut free = self.cv.wait_while(self.free.lock().unwrap(), |n| *n == 0).unwrap();
            *free -= 1;
        }
        let out = f();
        *self.free.lock().unwrap() += 1;
        self.cv.notify_one();
        out
    }
}

enum Failure {
    Retry(String),
    Fatal(String),
}

struct Client {
    agent: ureq::Agent,
    base: String,
    attempts: u32,
    backoff: Duration,
    inflight: Inflight,
}

impl Client {
    fn new(endpoint: &str, cfg: &RemoteConfig) -> Self {
        let agent = ureq::Agent::new_with_config(
            ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_s)))
                .http_status_as_error(false)
                .build(),
        );
        Self {
            agent,
            base: endpoint.trim_end_matches('/').to_string(),
            attempts: cfg.attempts,
            backoff: Duration::from_secs_f64(cfg.backoff_s),
            inflight: Inflight::new(cfg.max_inflight),
        }
    }

    fn once<Req: Serialize, Resp: for<'de> Deserialize<'de>>(&self, url: &str, body: &Req) -> Result<Resp, Failure> {
        let mut resp = self
            .agent
            .post(url)
            .send_json(body)
            .map_err(|e| Failure::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        if status >= 500 {
            return Err(Failure::Retry(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(Failure::Fatal(format!("HTTP {status}")));
        }
        resp.body_mut()
            .read_json()
            .map_err(|e| Failure::Fatal(format!("bad response body: {e}")))
    }

    /// Posts with retries on transport errors and 5xx, sleeping
    /// `backoff · 2^i` between attempts. `Err` carries the final cause.
    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(&self, path: &str, body: &Req) -> Result<Resp, String> {
        let url = format!("{}{path}", self.base);
        self.inflight.run(|| {
            let mut last = String::new();
            for i in 0..self.attempts {
                if i > 0 {
                    thread::sleep(self.backoff * 2u32.pow(i - 1));
                }
                match self.once(&url, body) {
                    Ok(r) => return Ok(r),
                    Err(Failure::Fatal(m)) => return Err(format!("{url}: {m}")),
                    Err(Failure::Retry(m)) => {
                        log::warn!("{url}: attempt {} of {} failed: {m}", i + 1, self.attempts);
                        last = m;
                    }
                }
            }
            Err(format!("{url}: {last} after {} attempts", self.attempts))
        })
    }
}

fn png_b64(bundle: &PanoramaBundle) -> String {
    B64.encode(encode_png(bundle.width, bundle.height, &bundle.rgb))
}

#[derive(Serialize)]
struct GroundRequest<'a> {
    image_png_b64: String,
    prompt: String,
    query_id: &'a str,
}

#[derive(Deserialize)]
struct GroundResponse {
    text: String,
}

/// Grounds through a remote model. Unparseable answers become absent boxes.
pub struct RemoteGrounder {
    client: Client,
}

impl RemoteGrounder {
    pub fn new(endpoint: &str, cfg: &RemoteConfig) -> Self {
        Self {
            client: Client::new(endpoint, cfg),
        }
    }
}

impl Grounder for RemoteGrounder {
    fn ground(
        &self,
        bundle: &PanoramaBundle,
        view_id: u32,
        query: &GroundingQuery,
    ) -> Result<ViewPrediction, GroundError> {
        let req = GroundRequest {
            image_png_b64: png_b64(bundle),
            prompt: build_prompt(&query.text)?,
            query_id: &query.query_id,
        };
        let resp: GroundResponse = self.client.post("/ground", &req).map_err(GroundError::Transport)?;
        let digit_box = match parse_box_text(&resp.text) {
            Some(values) => Some(digit_box_from_values(values, bundle.width, bundle.height)?),
            None => {
                log::warn!(
                    "query {} view {view_id}: no box in response {:?}",
                    query.query_id,
                    resp.text
                );
                None
            }
        };
        Ok(ViewPrediction {
            view_id,
            digit_box,
            confidence: None,
            source: PredictionSource::Remote,
        })
    }
}

#[derive(Serialize)]
struct SegmentRequest {
    image_png_b64: String,
    #[serde(rename = "box")]
    pixel_box: [u32; 4],
}

#[derive(Deserialize)]
struct SegmentResponse {
    mask_png_b64: String,
}

/// Box-prompted masks from a remote segmentation model.
pub struct RemoteMask {
    client: Client,
}

impl RemoteMask {
    pub fn new(endpoint: &str, cfg: &RemoteConfig) -> Self {
        Self {
            client: Client::new(endpoint, cfg),
        }
    }
}

impl MaskProvider for RemoteMask {
    fn mask(&self, bundle: &PanoramaBundle, b: &PixelBox) -> Result<Vec<(u32, u32)>, AggError> {
        let req = SegmentRequest {
            image_png_b64: png_b64(bundle),
            pixel_box: [b.x1, b.y1, b.x2, b.y2],
        };
        let resp: SegmentResponse = self
            .client
            .post("/segment", &req)
            .map_err(AggError::ProviderTransport)?;
        let bytes = B64
            .decode(resp.mask_png_b64.as_bytes())
            .map_err(|e| AggError::Provider(format!("mask is not base64: {e}")))?;
        let (w, h, px) =
            decode_png(&bytes, "<segment response>".as_ref()).map_err(|e| AggError::Provider(e.to_string()))?;
        if (w, h) != (bundle.width, bundle.height) {
            return Err(AggError::Provider(format!(
                "mask is {w}x{h}, panorama is {}x{}",
                bundle.width, bundle.height
            )));
        }
        Ok(px
            .iter()
            .enumerate()
            .filter(|(_, p)| p.iter().any(|&c| c != 0))
            .map(|(i, _)| (i as u32 % w, i as u32 / w))
            .collect())
    }
}
