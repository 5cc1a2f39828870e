use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use gsforge::camera::{CameraModel, Intrinsics};
use gsforge::env::arena::flat_arena;
use gsforge::raster::{render, RenderOptions};
use gsforge::service::{serve, Channel, ObjectPose, RenderClient, RenderRequest, RenderService, ServiceError};
use gsforge::splat::SourceLabel;
use gsforge::transform::merge_scenes;
use gsforge::transform::similarity::SimilarityTransform;
use gsforge::transform::transform_scene;
use nalgebra::{UnitQuaternion, Vector3};

fn start() -> (SocketAddr, Arc<RenderService>) {
    let k = Intrinsics::from_fov(48, 32, 1.3, 0.95);
    let service = Arc::new(RenderService::new(&flat_arena(5.0), k, RenderOptions::default()).unwrap());
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let s = Arc::clone(&service);
    thread::spawn(move || serve(listener, s, Some(Duration::from_secs(10))));
    (addr, service)
}

fn looking_north(id: u64) -> RenderRequest {
    let q = UnitQuaternion::from_euler_angles(-std::f64::consts::FRAC_PI_2, 0.0, 0.0);
    RenderRequest {
        id,
        position: [0.0, -2.0, 0.4],
        quaternion: [q.w, q.i, q.j, q.k],
        intrinsics: None,
        objects: vec![],
        channels: vec![Channel::Rgb, Channel::Depth, Channel::Gray],
    }
}

fn cone_at(id: &str, x: f64, y: f64) -> ObjectPose {
    ObjectPose {
        id: id.into(),
        position: [x, y, 0.0],
        quaternion: [1.0, 0.0, 0.0, 0.0],
        scale: 1.0,
    }
}

#[test]
fn service_matches_offline_render() {
    let (addr, service) = start();
    let mut client = RenderClient::connect(addr).unwrap();
    let mut req = looking_north(1);
    req.objects = vec![cone_at("cone_red", 0.5, 0.0)];
    let resp = client.request(&req).unwrap();

    // offline: pose the cones by hand and merge in asset order
    let arena = flat_arena(5.0);
    let posed: Vec<_> = arena
        .objects
        .iter()
        .map(|o| {
            let t = if o.id == "cone_red" {
                SimilarityTransform::from_translation(Vector3::new(0.5, 0.0, 0.0))
            } else {
                SimilarityTransform::identity()
            };
            (transform_scene(&o.scene, &t), SourceLabel::Object(o.id.clone()))
        })
        .collect();
    let mut parts = vec![(&arena.scene, SourceLabel::Environment)];
    parts.extend(posed.iter().map(|(s, l)| (s, l.clone())));
    let scene = merge_scenes(&parts).unwrap();
    let q = UnitQuaternion::from_euler_angles(-std::f64::consts::FRAC_PI_2, 0.0, 0.0);
    let cam = CameraModel::from_position_orientation(service.intrinsics(), Vector3::new(0.0, -2.0, 0.4), q);
    let out = render(&scene, &cam, &RenderOptions::default());
    assert_eq!(resp.id, 1);
    assert_eq!(resp.channel(Channel::Rgb).unwrap(), out.rgb8().as_slice());
    let depth: Vec<u8> = out.depth.iter().flat_map(|d| (*d as f32).to_le_bytes()).collect();
    assert_eq!(resp.channel(Channel::Depth).unwrap(), depth.as_slice());
}

#[test]
fn object_poses_are_stateless() {
    let (addr, _) = start();
    let mut client = RenderClient::connect(addr).unwrap();
    let mut first = looking_north(1);
    first.objects = vec![cone_at("cone_blue", -0.8, 0.0)];
    let mut second = looking_north(2);
    second.objects = vec![cone_at("cone_blue", 0.2, 0.0)];
    let a = client.request(&first).unwrap();
    let b = client.request(&second).unwrap();
    first.id = 3;
    let c = client.request(&first).unwrap();
    assert_ne!(a.channel(Channel::Rgb), b.channel(Channel::Rgb));
    assert_eq!(a.payloads, c.payloads);

    // the blue cone moved right in the image
    let blue_x = |rgb: &[u8]| {
        let (mut sum, mut n) = (0.0, 0.0);
        for (i, p) in rgb.chunks(3).enumerate() {
            if p[2] as i32 > p[0] as i32 + 60 && p[2] as i32 > p[1] as i32 + 60 {
                sum += (i % 48) as f64;
                n += 1.0;
            }
        }
        sum / n
    };
    assert!(blue_x(b.channel(Channel::Rgb).unwrap()) > blue_x(a.channel(Channel::Rgb).unwrap()) + 3.0);
}

#[test]
fn responses_follow_request_order() {
    let (addr, _) = start();
    let mut client = RenderClient::connect(addr).unwrap();
    let ids = [7u64, 3, 11, 5];
    for &id in &ids {
        let mut r = looking_north(id);
        r.channels = vec![Channel::Gray];
        client.send_raw(&gsforge::service::encode_request(&r)).unwrap();
    }
    for &id in &ids {
        let h = client.read_header().unwrap();
        assert_eq!(h.id, Some(id));
        assert_eq!(h.status, "ok");
    }
}

#[test]
fn unknown_object_keeps_the_connection() {
    let (addr, _) = start();
    let mut client = RenderClient::connect(addr).unwrap();
    let mut bad = looking_north(1);
    bad.objects = vec![cone_at("cone_purple", 0.0, 0.0)];
    match client.request(&bad) {
        Err(ServiceError::Remote { code, .. }) => assert_eq!(code, "unknown-object"),
        other => panic!("{other:?}"),
    }
    assert_eq!(client.request(&looking_north(2)).unwrap().id, 2);
}

#[test]
fn truncated_frame_closes_the_connection() {
    let (addr, _) = start();
    let mut client = RenderClient::connect(addr).unwrap();
    client.send_bytes(&[0, 0, 0, 40, b'{']).unwrap();
    client.finish_writing().unwrap();
    let h = client.read_header().unwrap();
    assert_eq!(h.code.as_deref(), Some("malformed-frame"));
    assert!(client.read_payload().is_err());
    // the server keeps accepting
    let mut fresh = RenderClient::connect(addr).unwrap();
    assert!(fresh.request(&looking_north(1)).is_ok());
}

#[test]
fn oversized_declared_length_is_rejected() {
    let (addr, _) = start();
    let mut client = RenderClient::connect(addr).unwrap();
    client.send_bytes(&u32::MAX.to_be_bytes()).unwrap();
    let h = client.read_header().unwrap();
    assert_eq!(h.code.as_deref(), Some("malformed-frame"));
}
