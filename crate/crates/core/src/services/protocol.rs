//! Wire shapes of the `/v1/*` endpoints and conversions from and to the
//! in-memory queries.

use serde::{Deserialize, Serialize};

use super::{Cutout, DetectQuery, OutpaintQuery, RenderQuery, Result, ServiceError, TestOracle, VqaQuery};
use crate::metrics::Detection;
use crate::raster::{self, BinaryMask};

pub const RENDER_PATH: &str = "/v1/render";
pub const OUTPAINT_PATH: &str = "/v1/outpaint";
pub const SEGMENT_PATH: &str = "/v1/segment";
pub const DETECT_PATH: &str = "/v1/detect";
pub const VQA_PATH: &str = "/v1/vqa";

fn default_controlnet_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRequest {
    pub request_id: String,
    pub azimuth_deg: f64,
    pub polar_deg: f64,
    pub height_px: u32,
    pub car_type: String,
    pub color: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderResponse {
    pub request_id: String,
    pub image_png_b64: String,
    pub alpha_png_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutpaintRequest {
    pub request_id: String,
    pub image_png_b64: String,
    pub object_mask_png_b64: String,
    pub road_mask_png_b64: String,
    pub prompt: String,
    pub seed: u64,
    #[serde(default = "default_controlnet_weight")]
    pub controlnet_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutpaintResponse {
    pub request_id: String,
    pub image_png_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRequest {
    pub request_id: String,
    pub image_png_b64: String,
    pub point: [u32; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub request_id: String,
    pub mask_png_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectRequest {
    pub request_id: String,
    pub image_png_b64: String,
    pub nms_iou: f64,
    #[serde(rename = "_test_oracle", default, skip_serializing_if = "Option::is_none")]
    pub test_oracle: Option<TestOracle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub request_id: String,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqaRequest {
    pub request_id: String,
    pub image_png_b64: String,
    pub question: String,
    pub choices: Vec<String>,
    #[serde(rename = "_test_oracle", default, skip_serializing_if = "Option::is_none")]
    pub test_oracle: Option<TestOracle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaResponse {
    pub request_id: String,
    pub answer: String,
}

/// Body of every 4xx/5xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

/// Responses echo the id of the request they answer.
pub trait Echo {
    fn request_id(&self) -> &str;
}

macro_rules! echo {
    ($($t:ty),*) => {$(
        impl Echo for $t {
            fn request_id(&self) -> &str {
                &self.request_id
            }
        }
    )*};
}
echo!(RenderResponse, OutpaintResponse, SegmentResponse, DetectResponse, VqaResponse);

impl RenderRequest {
    pub fn from_query(request_id: String, q: &RenderQuery) -> Self {
        Self {
            request_id,
            azimuth_deg: q.azimuth_deg,
            polar_deg: q.polar_deg,
            height_px: q.height_px,
            car_type: q.car_type.to_string(),
            color: q.color.to_string(),
            seed: q.seed,
        }
    }

    pub fn to_query(&self) -> Result<RenderQuery> {
        let bad = |e: crate::scene::SceneError| ServiceError::Protocol(e.to_string());
        Ok(RenderQuery {
            azimuth_deg: self.azimuth_deg,
            polar_deg: self.polar_deg,
            height_px: self.height_px,
            car_type: self.car_type.parse().map_err(bad)?,
            color: self.color.parse().map_err(bad)?,
            seed: self.seed,
        })
    }
}

impl RenderResponse {
    pub fn from_cutout(request_id: String, c: &Cutout) -> Self {
        Self { request_id, image_png_b64: raster::rgb_to_b64(&c.image), alpha_png_b64: raster::gray_to_b64(&c.alpha) }
    }

    pub fn to_cutout(&self) -> Result<Cutout> {
        let image = raster::rgb_from_b64(&self.image_png_b64)?;
        let alpha = raster::gray_from_b64(&self.alpha_png_b64)?;
        if image.dimensions() != alpha.dimensions() {
            return Err(ServiceError::Protocol("alpha and image sizes differ".into()));
        }
        Ok(Cutout { image, alpha })
    }
}

impl OutpaintRequest {
    pub fn from_query(request_id: String, q: &OutpaintQuery<'_>) -> Self {
        Self {
            request_id,
            image_png_b64: raster::rgb_to_b64(q.image),
            object_mask_png_b64: raster::mask_to_b64(q.object_mask),
            road_mask_png_b64: raster::mask_to_b64(q.road_mask),
            prompt: q.prompt.to_string(),
            seed: q.seed,
            controlnet_weight: q.controlnet_weight,
        }
    }

    /// Decoded image, object mask and road mask.
    pub fn decode(&self) -> Result<(image::RgbImage, BinaryMask, BinaryMask)> {
        let image = raster::rgb_from_b64(&self.image_png_b64)?;
        let object = raster::mask_from_b64(&self.object_mask_png_b64)?;
        let road = raster::mask_from_b64(&self.road_mask_png_b64)?;
        if object.dimensions() != image.dimensions() || road.dimensions() != image.dimensions() {
            return Err(ServiceError::Protocol("mask and image sizes differ".into()));
        }
        Ok((image, object, road))
    }
}

impl DetectRequest {
    pub fn from_query(request_id: String, q: &DetectQuery<'_>) -> Self {
        Self {
            request_id,
            image_png_b64: raster::rgb_to_b64(q.image),
            nms_iou: q.nms_iou,
            test_oracle: q.oracle.cloned(),
        }
    }
}

impl VqaRequest {
    pub fn from_query(request_id: String, q: &VqaQuery<'_>) -> Self {
        Self {
            request_id,
            image_png_b64: raster::rgb_to_b64(q.image),
            question: q.question.to_string(),
            choices: q.choices.to_vec(),
            test_oracle: q.oracle.cloned(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Background, CarColor, CarType};
    use crate::services::OracleObject;
    use proptest::prelude::*;

    fn text() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9 _\\-\"\\\\é]{0,12}"
    }

    fn finite() -> impl Strategy<Value = f64> {
        -1.0e6f64..1.0e6
    }

    fn oracle() -> impl Strategy<Value = Option<TestOracle>> {
        prop::option::of((finite(), 0.0f64..1.0, any::<bool>()).prop_map(|(a, occ, flag)| TestOracle {
            objects: vec![OracleObject {
                car_type: CarType::SmartCar,
                color: CarColor::Pink,
                full_box: [a, 1.0, a + 3.5, 9.0],
                visible_box: if flag { None } else { Some([a, 1.0, a + 1.0, 9.0]) },
                occlusion_rate: occ,
                azimuth_deg: -a / 1e4,
            }],
            background: Background::Lake,
            flags: if flag { vec!["road_removed".into()] } else { vec![] },
        }))
    }

    fn round_trip<T: Serialize + serde::de::DeserializeOwned + PartialEq + std::fmt::Debug>(msg: &T) -> std::result::Result<(), TestCaseError> {
        let text = serde_json::to_string(msg).unwrap();
        let back: T = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, msg);
        prop_assert_eq!(serde_json::to_string(&back).unwrap(), text);
        Ok(())
    }

    proptest! {
        #[test]
        fn render_round_trip(id in text(), az in finite(), po in finite(), h in any::<u32>(), t in text(), c in text(), seed in any::<u64>()) {
            round_trip(&RenderRequest { request_id: id.clone(), azimuth_deg: az, polar_deg: po, height_px: h, car_type: t, color: c, seed })?;
            round_trip(&RenderResponse { request_id: id, image_png_b64: "aGk=".into(), alpha_png_b64: String::new() })?;
        }

        #[test]
        fn outpaint_round_trip(id in text(), prompt in text(), seed in any::<u64>(), w in finite()) {
            round_trip(&OutpaintRequest {
                request_id: id.clone(), image_png_b64: "x".into(), object_mask_png_b64: "y".into(),
                road_mask_png_b64: "z".into(), prompt, seed, controlnet_weight: w,
            })?;
            round_trip(&OutpaintResponse { request_id: id, image_png_b64: "q".into() })?;
        }

        #[test]
        fn segment_detect_vqa_round_trip(
            id in text(), x in any::<u32>(), y in any::<u32>(), nms in 0.0f64..1.0, o in oracle(),
            q in text(), choices in prop::collection::vec(text(), 0..4), conf in 0.0f64..=1.0, label in text(),
        ) {
            round_trip(&SegmentRequest { request_id: id.clone(), image_png_b64: "i".into(), point: [x, y] })?;
            round_trip(&SegmentResponse { request_id: id.clone(), mask_png_b64: "m".into() })?;
            round_trip(&DetectRequest { request_id: id.clone(), image_png_b64: "i".into(), nms_iou: nms, test_oracle: o.clone() })?;
            round_trip(&DetectResponse { request_id: id.clone(), detections: vec![Detection { bbox: [0.0, 1.5, 2.0, 3.0], label, confidence: conf }] })?;
            round_trip(&VqaRequest { request_id: id.clone(), image_png_b64: "i".into(), question: q.clone(), choices, test_oracle: o })?;
            round_trip(&VqaResponse { request_id: id, answer: q })?;
        }
    }

    #[test]
    fn exact_field_names() {
        let r = DetectResponse {
            request_id: "r1".into(),
            detections: vec![Detection { bbox: [1.0, 2.0, 3.0, 4.0], label: "car".into(), confidence: 0.5 }],
        };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"request_id":"r1","detections":[{"box":[1.0,2.0,3.0,4.0],"class":"car","confidence":0.5}]}"#
        );
        let seg = SegmentRequest { request_id: "a".into(), image_png_b64: "b".into(), point: [3, 4] };
        assert_eq!(serde_json::to_string(&seg).unwrap(), r#"{"request_id":"a","image_png_b64":"b","point":[3,4]}"#);
        let o: OutpaintRequest = serde_json::from_str(
            r#"{"request_id":"a","image_png_b64":"","object_mask_png_b64":"","road_mask_png_b64":"","prompt":"p","seed":1}"#,
        )
        .unwrap();
        assert_eq!(o.controlnet_weight, 1.0);
        let d: DetectRequest = serde_json::from_str(r#"{"request_id":"a","image_png_b64":"","nms_iou":0.5}"#).unwrap();
        assert!(d.test_oracle.is_none());
        assert!(serde_json::from_str::<DetectRequest>(r#"{"request_id":"a","image_png_b64":"","nms_iou":0.5,"x":1}"#).is_err());
        assert!(serde_json::from_str::<SegmentRequest>(r#"{"request_id":"a","image_png_b64":""}"#).is_err());
    }
}
