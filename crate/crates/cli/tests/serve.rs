use std::net::SocketAddr;
use std::sync::mpsc;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use bev2ego::metrics::MmsConfig;
use bev2ego::pipeline::{realize_scene, PipelineConfig};
use bev2ego::scene::{CarColor, CarType, SamplerConfig, SceneConfig, SceneSampler};
use bev2ego::services::protocol::ErrorBody;
use bev2ego::services::{
    DetectQuery, Detector, EndpointsConfig, HttpService, OutpaintQuery, Outpainter, RenderQuery, Renderer, Segmenter,
    ServiceEndpoint, ServiceError, ServiceSet, Vqa, VqaQuery,
};
use bev2ego_cli::serve::{self, AppState};

const SEEDS: usize = 2;

fn services() -> ServiceSet {
    let text = r#"{"detectors": {"ident": {"mock": "identity"}, "planted": {"mock": "planted"}}}"#;
    EndpointsConfig::parse(text).unwrap().build().unwrap()
}

struct Server {
    base: String,
    http: Client,
    _store: tempfile::TempDir,
}

impl Server {
    fn start(model_host: bool) -> Self {
        let store = tempfile::tempdir().unwrap();
        let mms = MmsConfig { seeds_per_scene: SEEDS, ..MmsConfig::default() };
        let state = AppState::new(store.path().to_path_buf(), services(), mms).unwrap();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            serve::run("127.0.0.1:0".parse().unwrap(), state, model_host, |a| tx.send(a).unwrap()).unwrap();
        });
        let addr: SocketAddr = rx.recv().unwrap();
        Server { base: format!("http://{addr}"), http: Client::new(), _store: store }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn post_text(&self, path: &str, body: String) -> reqwest::blocking::Response {
        self.http.post(self.url(path)).header("content-type", "application/json").body(body).send().unwrap()
    }
}

fn scenes(n: usize, cars: usize, seed: u64) -> Vec<SceneConfig> {
    SceneSampler::new(seed, SamplerConfig { seeds_per_scene: 3, ..SamplerConfig::default() }).sample_scenes(n, cars).unwrap()
}

#[test]
fn scene_crud_round_trip() {
    let s = Server::start(false);
    assert_eq!(s.http.get(s.url("/health")).send().unwrap().json::<Value>().unwrap()["status"], "ok");
    let scene = scenes(1, 2, 1).remove(0);

    let r = s.post_text("/api/scenes", scene.to_document());
    assert_eq!(r.status(), StatusCode::CREATED);
    assert_eq!(s.post_text("/api/scenes", scene.to_document()).status(), StatusCode::CONFLICT);

    let got: SceneConfig = s.http.get(s.url(&format!("/api/scenes/{}", scene.id))).send().unwrap().json().unwrap();
    assert_eq!(got, scene);
    let list: Value = s.http.get(s.url("/api/scenes")).send().unwrap().json().unwrap();
    assert_eq!(list.as_array().unwrap().len(), 1);
    assert_eq!(list[0]["id"], scene.id.as_str());

    let mut edited = scene.clone();
    edited.cars[0].color = if edited.cars[0].color == CarColor::Red { CarColor::Blue } else { CarColor::Red };
    let r = s.http.put(s.url(&format!("/api/scenes/{}", scene.id))).body(edited.to_document()).send().unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let got: SceneConfig = s.http.get(s.url(&format!("/api/scenes/{}", scene.id))).send().unwrap().json().unwrap();
    assert_eq!(got, edited);

    let r = s.http.put(s.url("/api/scenes/other")).body(edited.to_document()).send().unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);

    assert_eq!(s.http.delete(s.url(&format!("/api/scenes/{}", scene.id))).send().unwrap().status(), StatusCode::NO_CONTENT);
    assert_eq!(s.http.get(s.url(&format!("/api/scenes/{}", scene.id))).send().unwrap().status(), StatusCode::NOT_FOUND);
    assert_eq!(s.http.delete(s.url(&format!("/api/scenes/{}", scene.id))).send().unwrap().status(), StatusCode::NOT_FOUND);
}

#[test]
fn invalid_scenes_and_ids_are_rejected() {
    let s = Server::start(false);
    let mut scene = scenes(1, 2, 2).remove(0);
    scene.id = "../escape".into();
    let r = s.post_text("/api/scenes", scene.to_document());
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    assert_eq!(r.json::<ErrorBody>().unwrap().code, "bad_request");

    let mut scene = scenes(1, 2, 2).remove(0);
    scene.scale = -1.0;
    let r = s.post_text("/api/scenes", scene.to_document());
    assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(s.post_text("/api/scenes", "{".into()).status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(s.http.get(s.url("/api/scenes/.hidden")).send().unwrap().status(), StatusCode::BAD_REQUEST);
}

#[test]
fn preview_orders_cars_by_depth() {
    let s = Server::start(false);
    let scene = scenes(1, 3, 8).remove(0);
    let inline: Value = s.post_text("/api/preview", scene.to_document()).json().unwrap();
    let cars = inline["cars"].as_array().unwrap();
    assert_eq!(cars.len(), 3);
    let depths: Vec<f64> = cars.iter().map(|c| c["depth"].as_f64().unwrap()).collect();
    assert!(depths.windows(2).all(|w| w[0] >= w[1]));

    s.post_text("/api/scenes", scene.to_document());
    let stored: Value = s.http.get(s.url(&format!("/api/scenes/{}/preview", scene.id))).send().unwrap().json().unwrap();
    assert_eq!(stored, inline);
}

#[test]
fn realize_returns_image_and_sidecar() {
    let s = Server::start(false);
    let scene = scenes(1, 2, 3).remove(0);
    s.post_text("/api/scenes", scene.to_document());
    let v: Value = s.post_text(&format!("/api/scenes/{}/realize", scene.id), json!({"seed": 2}).to_string()).json().unwrap();
    assert_eq!(v["sidecar"]["seed"], 2);
    assert_eq!(v["sidecar"]["objects"].as_array().unwrap().len(), 2);
    let direct = realize_scene(&scene, 2, &services(), &PipelineConfig::default()).unwrap();
    assert_eq!(v["image_png_b64"], bev2ego::raster::rgb_to_b64(&direct.image));
}

#[test]
fn evaluate_then_mine() {
    let s = Server::start(false);
    let all = scenes(12, 2, 5);
    for sc in &all {
        assert_eq!(s.post_text("/api/scenes", sc.to_document()).status(), StatusCode::CREATED);
    }
    let v: Value = s.post_text(&format!("/api/scenes/{}/evaluate", all[0].id), String::new()).json().unwrap();
    let ident = &v["detectors"][0];
    assert_eq!(ident["detector"], "ident");
    assert_eq!(ident["mms"], 0.0);
    let seeds = ident["seeds"].as_array().unwrap();
    assert_eq!(seeds.len(), SEEDS);
    for seed in seeds {
        for obj in seed["objects"].as_array().unwrap() {
            assert_eq!(obj["confidence_at_50"], 1.0);
            assert!(obj["display_box"].is_object());
        }
    }

    for sc in &all[1..] {
        s.post_text(&format!("/api/scenes/{}/evaluate", sc.id), String::new());
    }
    // a repeated evaluation replaces the earlier records
    s.post_text(&format!("/api/scenes/{}/evaluate", all[0].id), String::new());

    let m: Value = s.http.get(s.url("/api/mining?detector=planted&min_support=2&at_50=true")).send().unwrap().json().unwrap();
    assert_eq!(m["detector"], "planted");
    assert_eq!(m["scenes"], 12);
    let r = s.http.get(s.url("/api/mining?detector=nobody")).send().unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
}

#[test]
fn mock_host_matches_direct_services() {
    let s = Server::start(true);
    let mut ep = ServiceEndpoint::new(&s.base);
    ep.max_attempts = 1;
    let client = HttpService::new(ep).unwrap();
    let direct = services();

    let q = RenderQuery { azimuth_deg: 35.0, polar_deg: 8.0, height_px: 40, car_type: CarType::Suv, color: CarColor::Green, seed: 4 };
    assert_eq!(client.render(&q).unwrap(), direct.renderer.render(&q).unwrap());

    let scene = scenes(1, 2, 6).remove(0);
    let r = realize_scene(&scene, 0, &direct, &PipelineConfig::default()).unwrap();
    let oq = OutpaintQuery {
        image: &r.composite,
        object_mask: &r.object_mask,
        road_mask: &r.road_mask,
        prompt: &scene.prompt(),
        seed: 0,
        controlnet_weight: 1.0,
    };
    assert_eq!(client.outpaint(&oq).unwrap(), direct.outpainter.outpaint(&oq).unwrap());

    let point = r.visible_masks[0].interior_point().unwrap();
    assert_eq!(client.segment(&r.outpainted, point).unwrap(), direct.segmenter.segment(&r.outpainted, point).unwrap());

    let oracle = r.sidecar.oracle();
    let dq = DetectQuery { image: &r.image, nms_iou: 0.5, oracle: Some(&oracle) };
    assert_eq!(client.detect(&dq).unwrap(), direct.detectors[0].detector.detect(&dq).unwrap());
    let named = HttpService::new(ServiceEndpoint::new(format!("{}/detectors/planted", s.base))).unwrap();
    assert_eq!(named.detect(&dq).unwrap(), direct.detectors[1].detector.detect(&dq).unwrap());

    let choices: Vec<String> = ["yes", "no"].map(String::from).to_vec();
    let vq = VqaQuery { image: &r.image, question: "is there a road?", choices: &choices, oracle: Some(&oracle) };
    assert_eq!(client.answer(&vq).unwrap(), direct.vqa.answer(&vq).unwrap());

    // error bodies map back onto the same service errors
    let bad = RenderQuery { polar_deg: 40.0, ..q };
    assert!(matches!(client.render(&bad), Err(ServiceError::Range(_))));
    let road = r.road_mask.interior_point().unwrap();
    let road_px = (road.0 * r.image.width() / r.outpainted.width(), road.1 * r.image.height() / r.outpainted.height());
    assert_eq!(client.segment(&r.image, road_px), Err(ServiceError::EmptyMask));
    let off = (r.image.width() + 5, 0);
    assert!(matches!(client.segment(&r.image, off), Err(ServiceError::Range(_))));

    let raw = s.post_text("/v1/detect", r#"{"request_id": "x"}"#.into());
    assert_eq!(raw.status(), StatusCode::BAD_REQUEST);
    assert_eq!(raw.json::<ErrorBody>().unwrap().code, "protocol_error");
}

#[test]
fn model_host_is_off_by_default() {
    let s = Server::start(false);
    assert_eq!(s.post_text("/v1/render", "{}".into()).status(), StatusCode::NOT_FOUND);
}
