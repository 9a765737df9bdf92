//! HTTP helpers and the service contract shared by the integration and
//! acceptance tests.
#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use anyhow::{ensure, Context};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use sssp_cli::{router, AppState, SessionStore};
use sssp_core::harness::Checkpoint;
use sssp_core::image::Image;
use tower::ServiceExt;

pub struct Reply {
    pub status: StatusCode,
    pub content_type: Option<String>,
    pub warning: Option<String>,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> anyhow::Result<Value> {
        Ok(serde_json::from_slice(&self.body)?)
    }
}

pub async fn send(app: &Router, req: Request<Body>) -> Reply {
    let resp = app.clone().oneshot(req).await.expect("infallible router");
    let status = resp.status();
    let header = |k: &str| resp.headers().get(k).and_then(|v| v.to_str().ok()).map(String::from);
    let content_type = header("content-type");
    let warning = header("x-sssp-warning");
    let body = resp.into_body().collect().await.expect("body").to_bytes().to_vec();
    Reply { status, content_type, warning, body }
}

pub async fn get(app: &Router, uri: &str) -> Reply {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

pub async fn post(app: &Router, uri: &str, body: impl Into<Body>) -> Reply {
    let req = Request::post(uri).header("content-type", "application/json").body(body.into()).unwrap();
    send(app, req).await
}

pub async fn post_json(app: &Router, uri: &str, v: &Value) -> Reply {
    post(app, uri, v.to_string()).await
}

pub fn decode_b64_png(s: &str, gray: bool) -> anyhow::Result<Image> {
    Ok(Image::from_png(&STANDARD.decode(s)?, gray)?)
}

pub fn b64_png(img: &Image) -> String {
    STANDARD.encode(img.to_png().unwrap())
}

/// sha256 over the serialized checkpoints, portrait first.
pub fn expected_hash(cks: &[&Checkpoint]) -> String {
    let mut h = Sha256::new();
    for ck in cks {
        h.update(ck.to_bytes().unwrap());
    }
    hex::encode(h.finalize())
}

fn str_field<'a>(v: &'a Value, key: &str) -> anyhow::Result<&'a str> {
    v[key].as_str().with_context(|| format!("missing string field {key} in {v}"))
}

/// Runs every endpoint check against a state holding both models.
/// Returns a one-line summary.
pub async fn service_contract(state: AppState, hash: &str) -> anyhow::Result<String> {
    let model = state.model.clone().context("portrait model")?;
    let codec = state.codec.clone().context("sketch model")?;
    let canvas = codec.cfg.resolution;
    let final_res = model.cfg.image_resolution;
    let state = Arc::new(state);
    let app = router(state.clone(), None);

    // health
    let r = get(&app, "/api/health").await;
    ensure!(r.status == StatusCode::OK, "health status {}", r.status);
    let h = r.json()?;
    ensure!(h["status"] == "ok", "health body {h}");
    ensure!(h["checkpoint_hash"] == hash, "checkpoint hash {} != {hash}", h["checkpoint_hash"]);

    // gallery
    let r = get(&app, "/api/contours").await;
    ensure!(r.status == StatusCode::OK);
    let gallery = r.json()?;
    let entries = gallery.as_array().context("gallery array")?;
    ensure!(entries.len() >= 8, "gallery has {} entries", entries.len());
    for e in entries {
        let img = decode_b64_png(str_field(e, "png")?, true)?;
        ensure!(img.height == canvas && img.width == canvas, "gallery image {}x{}", img.width, img.height);
    }
    ensure!(get(&app, "/api/contours").await.json()? == gallery, "gallery changed between calls");

    // contour2sketch determinism
    let req = json!({ "contour": str_field(&entries[0], "png")? });
    let a = post_json(&app, "/api/contour2sketch", &req).await;
    let b = post_json(&app, "/api/contour2sketch", &req).await;
    ensure!(a.status == StatusCode::OK, "contour2sketch status {}: {}", a.status, String::from_utf8_lossy(&a.body));
    let sketch_b64 = str_field(&a.json()?, "sketch")?.to_string();
    ensure!(sketch_b64 == str_field(&b.json()?, "sketch")?, "contour2sketch not deterministic");
    let sketch = decode_b64_png(&sketch_b64, true)?;
    ensure!(sketch.height == canvas && sketch.width == canvas);

    // error paths
    let r = post(&app, "/api/contour2sketch", vec![0x01u8, 0x02, 0x03]).await;
    ensure!(r.status == StatusCode::BAD_REQUEST, "garbage body gave {}", r.status);
    ensure!(r.json()?["error"].is_string(), "error body");
    let r = post_json(&app, "/api/contour2sketch", &json!({ "contour": "%%%not base64" })).await;
    ensure!(r.status == StatusCode::BAD_REQUEST, "bad base64 gave {}", r.status);
    let r = post_json(&app, "/api/contour2sketch", &json!({ "contour": STANDARD.encode(b"not a png") })).await;
    ensure!(r.status == StatusCode::BAD_REQUEST, "non-PNG gave {}", r.status);
    let small = b64_png(&Image::filled(1, canvas / 2, canvas / 2, 1.0));
    let r = post_json(&app, "/api/contour2sketch", &json!({ "contour": small })).await;
    ensure!(r.status == StatusCode::UNPROCESSABLE_ENTITY, "wrong dims gave {}", r.status);
    let r = post_json(&app, "/api/sketch2portrait", &json!({ "sketch": small })).await;
    ensure!(r.status == StatusCode::UNPROCESSABLE_ENTITY, "wrong sketch dims gave {}", r.status);
    let r = post(&app, "/api/sketch2portrait", "{").await;
    ensure!(r.status == StatusCode::BAD_REQUEST, "truncated JSON gave {}", r.status);

    // sketch2portrait
    let req = json!({ "sketch": sketch_b64, "camera": { "yaw": 0.2, "pitch": 0.1 } });
    let p1 = post_json(&app, "/api/sketch2portrait", &req).await.json()?;
    let p2 = post_json(&app, "/api/sketch2portrait", &req).await.json()?;
    let portrait_b64 = str_field(&p1, "portrait")?;
    ensure!(portrait_b64 == str_field(&p2, "portrait")?, "same sketch gave different portraits");
    let id = str_field(&p1, "session_id")?;
    ensure!(!id.is_empty() && id != str_field(&p2, "session_id")?, "session ids {id} / {}", p2["session_id"]);
    ensure!(p1.get("warning").is_none(), "unexpected warning {p1}");
    let portrait = decode_b64_png(portrait_b64, false)?;
    ensure!(portrait.channels == 3 && portrait.height == final_res && portrait.width == final_res);

    let clamped = post_json(&app, "/api/sketch2portrait", &json!({ "sketch": sketch_b64, "camera": { "yaw": 2.0, "pitch": 0.0 } }))
        .await
        .json()?;
    ensure!(clamped["warning"].is_string(), "yaw 2.0 not flagged: {clamped}");
    ensure!(clamped["camera"]["yaw"].as_f64() == Some(state.cameras.yaw.1), "yaw not clamped: {}", clamped["camera"]);

    // view: cache consistency and no encoder/backbone passes
    let before = model.call_counts();
    let v = get(&app, &format!("/api/view?session_id={id}&yaw=0.2&pitch=0.1")).await;
    ensure!(v.status == StatusCode::OK, "view status {}", v.status);
    ensure!(v.content_type.as_deref() == Some("image/png"), "view content type {:?}", v.content_type);
    ensure!(v.body == STANDARD.decode(portrait_b64)?, "view at the original pose differs from sketch2portrait");
    let turned = get(&app, &format!("/api/view?session_id={id}&yaw=-0.3&pitch=0")).await;
    ensure!(turned.status == StatusCode::OK && turned.body != v.body, "novel view missing or unchanged");
    let wide = get(&app, &format!("/api/view?session_id={id}&yaw=3")).await;
    ensure!(wide.status == StatusCode::OK && wide.warning.is_some(), "view clamp warning missing");
    ensure!(model.call_counts() == before, "view ran encoder/backbone: {before:?} -> {:?}", model.call_counts());

    let r = get(&app, "/api/view?session_id=no-such-session&yaw=0").await;
    ensure!(r.status == StatusCode::NOT_FOUND, "unknown session gave {}", r.status);
    let r = get(&app, "/api/view?yaw=0").await;
    ensure!(r.status == StatusCode::BAD_REQUEST, "missing session id gave {}", r.status);
    let r = get(&app, &format!("/api/view?session_id={id}&yaw=left")).await;
    ensure!(r.status == StatusCode::BAD_REQUEST, "non-numeric yaw gave {}", r.status);

    // expiry
    let short = AppState {
        model: state.model.clone(),
        codec: state.codec.clone(),
        cameras: state.cameras,
        sessions: SessionStore::new(4, Duration::from_millis(200)),
        gallery: state.gallery.clone(),
        checkpoint_hash: state.checkpoint_hash.clone(),
    };
    let short_app = router(Arc::new(short), None);
    let s = post_json(&short_app, "/api/sketch2portrait", &req).await.json()?;
    let sid = str_field(&s, "session_id")?;
    tokio::time::sleep(Duration::from_millis(300)).await;
    let r = get(&short_app, &format!("/api/view?session_id={sid}")).await;
    ensure!(r.status == StatusCode::NOT_FOUND, "expired session gave {}", r.status);

    // no models loaded
    let empty = router(Arc::new(AppState::from_checkpoints(None, None, &Default::default())?), None);
    let h = get(&empty, "/api/health").await.json()?;
    ensure!(h["status"] == "degraded" && h["checkpoint_hash"].is_null(), "empty health {h}");
    let r = post_json(&empty, "/api/contour2sketch", &json!({ "contour": small })).await;
    ensure!(r.status == StatusCode::SERVICE_UNAVAILABLE, "no codec gave {}", r.status);
    let r = post_json(&empty, "/api/sketch2portrait", &json!({ "sketch": small })).await;
    ensure!(r.status == StatusCode::SERVICE_UNAVAILABLE, "no model gave {}", r.status);

    Ok(format!("{} gallery entries, view reused session without encoder/backbone calls", entries.len()))
}
