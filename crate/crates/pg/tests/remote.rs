use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use pg::config::RemoteConfig;
use pg::raster::encode_png;
use pg::remote::{RemoteGrounder, RemoteMask};
use pg_core::aggregation::{AggError, MaskProvider};
use pg_core::geom::{PixelBox, Vec3};
use pg_core::grounder::{GroundError, Grounder, GroundingQuery};
use pg_core::panorama::PanoramaBundle;

struct Request {
    path: String,
    body: serde_json::Value,
}

fn read_request(stream: &mut TcpStream) -> Request {
    let mut r = BufReader::new(stream);
    let mut line = String::new();
    r.read_line(&mut line).unwrap();
    let path = line.split_whitespace().nth(1).unwrap().to_string();
    let mut len = 0;
    loop {
        line.clear();
        r.read_line(&mut line).unwrap();
        if line.trim().is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; len];
    r.read_exact(&mut body).unwrap();
    Request {
        path,
        body: serde_json::from_slice(&body).unwrap(),
    }
}

/// Serves `replies` per request in order (the last one repeats) and returns the base URL.
fn serve(replies: Vec<(u16, String)>, seen: Arc<AtomicUsize>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            let req = read_request(&mut stream);
            assert!(req.body["image_png_b64"].is_string());
            assert!(req.path == "/ground" || req.path == "/segment");
            let i = seen.fetch_add(1, Ordering::SeqCst).min(replies.len() - 1);
            let (status, body) = &replies[i];
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    url
}

fn cfg() -> RemoteConfig {
    RemoteConfig {
        attempts: 3,
        backoff_s: 0.01,
        timeout_s: 5.0,
        ..Default::default()
    }
}

fn bundle() -> PanoramaBundle {
    PanoramaBundle::empty(Vec3::zeros(), 0.0, 100, 50)
}

fn query() -> GroundingQuery {
    GroundingQuery {
        query_id: "q0".into(),
        text: "the red chair".into(),
        target_instance: None,
    }
}

#[test]
fn retries_server_errors_then_parses_box() {
    let seen = Arc::new(AtomicUsize::new(0));
    let url = serve(
        vec![
            (503, "{}".into()),
            (500, "{}".into()),
            (200, r#"{"text":"[0, 0, 999, 999]"}"#.into()),
        ],
        seen.clone(),
    );
    let p = RemoteGrounder::new(&url, &cfg())
        .ground(&bundle(), 2, &query())
        .unwrap();
    assert_eq!(seen.load(Ordering::SeqCst), 3);
    assert_eq!(p.view_id, 2);
    assert_eq!(p.pixel_box(), Some(PixelBox::from_corners(0, 0, 99, 49)));
}

#[test]
fn unparseable_answer_is_absent_box() {
    let url = serve(vec![(200, r#"{"text":"I cannot see it"}"#.into())], Arc::default());
    let p = RemoteGrounder::new(&url, &cfg())
        .ground(&bundle(), 0, &query())
        .unwrap();
    assert!(p.digit_box.is_none());
}

#[test]
fn client_errors_are_not_retried() {
    let seen = Arc::new(AtomicUsize::new(0));
    let url = serve(vec![(400, "{}".into())], seen.clone());
    let err = RemoteGrounder::new(&url, &cfg())
        .ground(&bundle(), 0, &query())
        .unwrap_err();
    assert!(matches!(err, GroundError::Transport(_)));
    assert_eq!(seen.load(Ordering::SeqCst), 1);
}

#[test]
fn persistent_failure_gives_up() {
    let seen = Arc::new(AtomicUsize::new(0));
    let url = serve(vec![(502, "{}".into())], seen.clone());
    let err = RemoteGrounder::new(&url, &cfg())
        .ground(&bundle(), 0, &query())
        .unwrap_err();
    assert!(matches!(err, GroundError::Transport(_)));
    assert_eq!(seen.load(Ordering::SeqCst), 3);
}

#[test]
fn refused_connection_is_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = RemoteGrounder::new(&format!("http://127.0.0.1:{port}"), &cfg())
        .ground(&bundle(), 0, &query())
        .unwrap_err();
    assert!(matches!(err, GroundError::Transport(_)));
}

#[test]
fn segment_mask_pixels() {
    let mut px = vec![[0u8; 3]; 100 * 50];
    px[10 * 100 + 20] = [255; 3];
    px[11 * 100 + 21] = [1, 0, 0];
    let body = serde_json::json!({ "mask_png_b64": B64.encode(encode_png(100, 50, &px)) }).to_string();
    let url = serve(vec![(200, body)], Arc::default());
    let mut mask = RemoteMask::new(&url, &cfg())
        .mask(&bundle(), &PixelBox::from_corners(15, 5, 30, 20))
        .unwrap();
    mask.sort();
    assert_eq!(mask, vec![(20, 10), (21, 11)]);

    let small = serde_json::json!({ "mask_png_b64": B64.encode(encode_png(10, 5, &[[0; 3]; 50])) }).to_string();
    let url = serve(vec![(200, small)], Arc::default());
    let err = RemoteMask::new(&url, &cfg())
        .mask(&bundle(), &PixelBox::from_corners(0, 0, 1, 1))
        .unwrap_err();
    assert!(matches!(err, AggError::Provider(_)));
}
