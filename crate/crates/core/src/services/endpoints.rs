use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::mock::{MockDetector, MockDetectorProfile, MockOutpainter, MockRenderer, MockSegmenter, MockVqa, OutpaintMode};
use super::{HttpService, NamedDetector, Result, ServiceEndpoint, ServiceError, ServiceSet};

/// Environment variable that overrides the endpoints file (a path or `mock`).
pub const ENDPOINTS_ENV: &str = "BEV2EGO_ENDPOINTS";

/// Either a built-in mock with its configuration or a remote endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EndpointSpec<M> {
    Mock { mock: M },
    Remote(ServiceEndpoint),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DetectorMock {
    Preset(String),
    Profile(MockDetectorProfile),
}

impl DetectorMock {
    fn profile(&self, name: &str) -> Result<MockDetectorProfile> {
        let mut p = match self {
            DetectorMock::Preset(preset) => MockDetectorProfile::preset(preset)
                .ok_or_else(|| ServiceError::Protocol(format!("unknown mock detector preset {preset:?}")))?,
            DetectorMock::Profile(p) => p.clone(),
        };
        p.name = name.to_string();
        Ok(p)
    }
}

fn default_mock() -> EndpointSpec<String> {
    EndpointSpec::Mock { mock: "default".into() }
}

fn default_outpaint() -> EndpointSpec<OutpaintMode> {
    EndpointSpec::Mock { mock: OutpaintMode::Faithful }
}

fn default_detectors() -> BTreeMap<String, EndpointSpec<DetectorMock>> {
    BTreeMap::from([("mock-default".to_string(), EndpointSpec::Mock { mock: DetectorMock::Preset("default".into()) })])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointsConfig {
    #[serde(default = "default_mock")]
    pub render: EndpointSpec<String>,
    #[serde(default = "default_outpaint")]
    pub outpaint: EndpointSpec<OutpaintMode>,
    #[serde(default = "default_mock")]
    pub segment: EndpointSpec<String>,
    #[serde(default = "default_mock")]
    pub vqa: EndpointSpec<String>,
    #[serde(default = "default_detectors")]
    pub detectors: BTreeMap<String, EndpointSpec<DetectorMock>>,
}

impl Default for EndpointsConfig {
    fn default() -> Self {
        Self {
            render: default_mock(),
            outpaint: default_outpaint(),
            segment: default_mock(),
            vqa: default_mock(),
            detectors: default_detectors(),
        }
    }
}

fn plain_mock(spec: &EndpointSpec<String>, what: &str) -> Result<Option<Arc<HttpService>>> {
    match spec {
        EndpointSpec::Mock { mock } if mock == "default" => Ok(None),
        EndpointSpec::Mock { mock } => Err(ServiceError::Protocol(format!("unknown {what} mock {mock:?}"))),
        EndpointSpec::Remote(ep) => Ok(Some(Arc::new(HttpService::new(ep.clone())?))),
    }
}

impl EndpointsConfig {
    /// All mocks, with the given detector presets or profiles.
    pub fn mock_with(detectors: Vec<(String, DetectorMock)>) -> Self {
        Self {
            detectors: detectors.into_iter().map(|(n, m)| (n, EndpointSpec::Mock { mock: m })).collect(),
            ..Self::default()
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        if text.trim() == "mock" {
            return Ok(Self::default());
        }
        serde_json::from_str(text).map_err(|e| ServiceError::Protocol(format!("endpoints file: {e}")))
    }

    /// `mock` or a path to a JSON endpoints file.
    pub fn from_arg(arg: &str) -> Result<Self> {
        if arg == "mock" {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(Path::new(arg))
            .map_err(|e| ServiceError::Protocol(format!("cannot read endpoints file {arg}: {e}")))?;
        Self::parse(&text)
    }

    /// Resolves the configuration; the environment variable wins over `arg`.
    pub fn load(arg: Option<&str>) -> Result<Self> {
        match std::env::var(ENDPOINTS_ENV) {
            Ok(v) if !v.is_empty() => Self::from_arg(&v),
            _ => arg.map_or_else(|| Ok(Self::default()), Self::from_arg),
        }
    }

    pub fn is_all_mock(&self) -> bool {
        let m = |s: &EndpointSpec<String>| matches!(s, EndpointSpec::Mock { .. });
        m(&self.render)
            && m(&self.segment)
            && m(&self.vqa)
            && matches!(self.outpaint, EndpointSpec::Mock { .. })
            && self.detectors.values().all(|d| matches!(d, EndpointSpec::Mock { .. }))
    }

    pub fn build(&self) -> Result<ServiceSet> {
        if self.detectors.is_empty() {
            return Err(ServiceError::Protocol("at least one detector is required".into()));
        }
        let renderer: Arc<dyn super::Renderer> = match plain_mock(&self.render, "render")? {
            Some(s) => s,
            None => Arc::new(MockRenderer::default()),
        };
        let segmenter: Arc<dyn super::Segmenter> = match plain_mock(&self.segment, "segment")? {
            Some(s) => s,
            None => Arc::new(MockSegmenter::default()),
        };
        let vqa: Arc<dyn super::Vqa> = match plain_mock(&self.vqa, "vqa")? {
            Some(s) => s,
            None => Arc::new(MockVqa),
        };
        let outpainter: Arc<dyn super::Outpainter> = match &self.outpaint {
            EndpointSpec::Mock { mock } => Arc::new(MockOutpainter::new(*mock)),
            EndpointSpec::Remote(ep) => Arc::new(HttpService::new(ep.clone())?),
        };
        let detectors = self
            .detectors
            .iter()
            .map(|(name, spec)| {
                let detector: Arc<dyn super::Detector> = match spec {
                    EndpointSpec::Mock { mock } => Arc::new(MockDetector::new(mock.profile(name)?)),
                    EndpointSpec::Remote(ep) => Arc::new(HttpService::new(ep.clone())?),
                };
                Ok(NamedDetector { name: name.clone(), detector })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ServiceSet { renderer, outpainter, segmenter, vqa, detectors })
    }
}
