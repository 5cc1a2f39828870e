//! Binary little-endian PLY in the layout written by Gaussian-splatting trainers.
//!
//! Property order on write is `x y z nx ny nz f_dc_0..2 f_rest_* opacity
//! scale_0..2 rot_0..3`, all `float`. `f_rest` is channel-major: the
//! coefficients of red come first, then green, then blue. Normals are read
//! and discarded, and written back as zeros.

use std::collections::HashMap;

use nalgebra::Vector3;

use super::{sh, GaussianScene, SplatError, SplatRecord};

const END_HEADER: &[u8] = b"end_header\n";

struct Property {
    name: String,
    offset: usize,
}

struct Header {
    vertex_count: usize,
    stride: usize,
    properties: Vec<Property>,
    body_offset: usize,
}

fn type_size(ty: &str) -> Option<usize> {
    Some(match ty {
        "char" | "uchar" | "int8" | "uint8" => 1,
        "short" | "ushort" | "int16" | "uint16" => 2,
        "int" | "uint" | "int32" | "uint32" | "float" | "float32" => 4,
        "double" | "float64" => 8,
        _ => return None,
    })
}

fn parse_header(bytes: &[u8]) -> Result<Header, SplatError> {
    let end = bytes
        .windows(END_HEADER.len())
        .position(|w| w == END_HEADER)
        .ok_or_else(|| SplatError::Header("no `end_header` line".into()))?;
    let text = std::str::from_utf8(&bytes[..end])
        .map_err(|_| SplatError::Header("header is not valid UTF-8".into()))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(SplatError::Header("missing `ply` magic".into()));
    }

    let mut format_seen = false;
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut properties = Vec::new();
    let mut stride = 0usize;
    for line in lines {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, version] => {
                if *fmt != "binary_little_endian" {
                    return Err(SplatError::Header(format!("unsupported format `{fmt}`")));
                }
                if !version.starts_with('1') {
                    return Err(SplatError::Header(format!("unsupported version `{version}`")));
                }
                format_seen = true;
            }
            ["element", name, count] => {
                if *name != "vertex" {
                    return Err(SplatError::Header(format!("unexpected element `{name}`")));
                }
                if vertex_count.is_some() {
                    return Err(SplatError::Header("duplicate vertex element".into()));
                }
                let n = count
                    .parse::<usize>()
                    .map_err(|_| SplatError::Header(format!("bad vertex count `{count}`")))?;
                vertex_count = Some(n);
                in_vertex = true;
            }
            ["property", "list", ..] => {
                return Err(SplatError::Header("list properties are not supported".into()));
            }
            ["property", ty, name] => {
                if !in_vertex {
                    return Err(SplatError::Header(format!("property `{name}` outside an element")));
                }
                let size = type_size(ty)
                    .ok_or_else(|| SplatError::Header(format!("unknown property type `{ty}`")))?;
                let known = is_known(name);
                if known && size != 4 || known && !matches!(*ty, "float" | "float32") {
                    return Err(SplatError::PropertyType {
                        name: name.to_string(),
                        ty: ty.to_string(),
                    });
                }
                if known {
                    properties.push(Property {
                        name: name.to_string(),
                        offset: stride,
                    });
                }
                stride += size;
            }
            _ => return Err(SplatError::Header(format!("unrecognized line `{line}`"))),
        }
    }
    if !format_seen {
        return Err(SplatError::Header("missing format line".into()));
    }
    let vertex_count =
        vertex_count.ok_or_else(|| SplatError::Header("missing `element vertex`".into()))?;
    Ok(Header {
        vertex_count,
        stride,
        properties,
        body_offset: end + END_HEADER.len(),
    })
}

fn is_known(name: &str) -> bool {
    matches!(
        name,
        "x" | "y" | "z" | "nx" | "ny" | "nz" | "opacity"
    ) || ["f_dc_", "f_rest_", "scale_", "rot_"]
        .iter()
        .any(|p| name.strip_prefix(p).is_some_and(|r| r.parse::<usize>().is_ok()))
}

fn required_names() -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

/// Parses a PLY byte buffer into a scene.
pub fn load_ply(bytes: &[u8]) -> Result<GaussianScene, SplatError> {
    let header = parse_header(bytes)?;
    let offsets: HashMap<&str, usize> = header
        .properties
        .iter()
        .map(|p| (p.name.as_str(), p.offset))
        .collect();
    for name in required_names() {
        if !offsets.contains_key(name.as_str()) {
            return Err(SplatError::MissingProperty(name));
        }
    }
    let rest_count = header
        .properties
        .iter()
        .filter(|p| p.name.starts_with("f_rest_"))
        .count();
    let degree = match rest_count {
        0 => 0,
        9 => 1,
        24 => 2,
        45 => 3,
        n => return Err(SplatError::RestCount(n)),
    };
    for i in 0..rest_count {
        let name = format!("f_rest_{i}");
        if !offsets.contains_key(name.as_str()) {
            return Err(SplatError::MissingProperty(name));
        }
    }

    let body = &bytes[header.body_offset..];
    let expected = header.vertex_count * header.stride;
    if body.len() != expected {
        return Err(SplatError::ElementCount {
            count: header.vertex_count,
            expected,
            actual: body.len(),
        });
    }

    let k = sh::coeff_count(degree);
    let idx = |name: &str| offsets[name];
    let o_xyz = [idx("x"), idx("y"), idx("z")];
    let o_dc = [idx("f_dc_0"), idx("f_dc_1"), idx("f_dc_2")];
    let o_rest: Vec<usize> = (0..rest_count).map(|i| idx(&format!("f_rest_{i}"))).collect();
    let o_opacity = idx("opacity");
    let o_scale = [idx("scale_0"), idx("scale_1"), idx("scale_2")];
    let o_rot = [idx("rot_0"), idx("rot_1"), idx("rot_2"), idx("rot_3")];

    let mut splats = Vec::with_capacity(header.vertex_count);
    for chunk in body.chunks_exact(header.stride.max(1)).take(header.vertex_count) {
        let f = |off: usize| -> f64 {
            f32::from_le_bytes(chunk[off..off + 4].try_into().expect("4-byte slice")) as f64
        };
        let mut coeffs = vec![[0.0; 3]; k];
        coeffs[0] = o_dc.map(f);
        for ch in 0..3 {
            for j in 1..k {
                coeffs[j][ch] = f(o_rest[ch * (k - 1) + (j - 1)]);
            }
        }
        splats.push(SplatRecord {
            mean: Vector3::from(o_xyz.map(f)),
            rotation: o_rot.map(f),
            log_scale: Vector3::from(o_scale.map(f)),
            opacity_logit: f(o_opacity),
            sh: coeffs,
        });
    }
    GaussianScene::new(splats, degree, None)
}

/// Writes the canonical PLY encoding of `scene`. Values are narrowed to `f32`.
pub fn save_ply(scene: &GaussianScene) -> Vec<u8> {
    let k = sh::coeff_count(scene.sh_degree());
    let rest = 3 * (k - 1);
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", scene.len()));
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz"].iter().map(|s| s.to_string()).collect();
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.extend((0..rest).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    for n in &names {
        header.push_str(&format!("property float {n}\n"));
    }
    header.push_str("end_header\n");

    let mut out = header.into_bytes();
    out.reserve(scene.len() * names.len() * 4);
    let mut put = |v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
    for s in scene.splats() {
        s.mean.iter().for_each(|v| put(*v));
        (0..3).for_each(|_| put(0.0));
        s.sh[0].iter().for_each(|v| put(*v));
        for ch in 0..3 {
            for coeff in &s.sh[1..] {
                put(coeff[ch]);
            }
        }
        put(s.opacity_logit);
        s.log_scale.iter().for_each(|v| put(*v));
        s.rotation.iter().for_each(|v| put(*v));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_vertex_identity() -> Vec<u8> {
        let names = required_names();
        let mut bytes = String::from("ply\nformat binary_little_endian 1.0\nelement vertex 1\n");
        for n in &names {
            bytes.push_str(&format!("property float {n}\n"));
        }
        bytes.push_str("end_header\n");
        let mut bytes = bytes.into_bytes();
        for n in &names {
            let v: f32 = if n == "rot_0" { 1.0 } else { 0.0 };
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes
    }

    #[test]
    fn zero_vertex_loads() {
        let scene = load_ply(&one_vertex_identity()).unwrap();
        assert_eq!(scene.len(), 1);
        let s = &scene.splats()[0];
        assert_eq!(s.rotation, [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.opacity(), 0.5);
        assert_eq!(scene.sh_degree(), 0);
    }

    #[test]
    fn empty_scene_round_trip() {
        let bytes = save_ply(&GaussianScene::empty(3));
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.contains("element vertex 0\n"));
        let back = load_ply(&bytes).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.sh_degree(), 3);
    }

    #[test]
    fn header_lists_position_before_dc() {
        let s = SplatRecord::isotropic(Vector3::zeros(), 0.1, 0.5, [0.3; 3], 0);
        let bytes = save_ply(&GaussianScene::new(vec![s], 0, None).unwrap());
        let text = String::from_utf8_lossy(&bytes);
        let x = text.find("property float x\n").unwrap();
        let z = text.find("property float z\n").unwrap();
        let dc = text.find("property float f_dc_0\n").unwrap();
        assert!(x < z && z < dc);
    }

    #[test]
    fn degree3_fixture_counts() {
        let splats = (0..3)
            .map(|i| {
                let mut s = SplatRecord::isotropic(Vector3::new(i as f64, 0.0, 0.0), 0.1, 0.5, [0.3; 3], 3);
                for (j, c) in s.sh.iter_mut().enumerate() {
                    *c = [j as f64 * 0.01, -(j as f64) * 0.02, 0.5];
                }
                s
            })
            .collect();
        let bytes = save_ply(&GaussianScene::new(splats, 3, None).unwrap());
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.contains("property float f_rest_44\n"));
        assert!(!text.contains("f_rest_45"));
        let scene = load_ply(&bytes).unwrap();
        assert_eq!(scene.sh_degree(), 3);
        for s in scene.splats() {
            assert_eq!(s.sh.len() * 3, 48);
        }
        assert_eq!(save_ply(&scene), bytes);
    }

    #[test]
    fn missing_property_is_named() {
        let bytes = one_vertex_identity();
        let text = String::from_utf8_lossy(&bytes).replace("property float scale_1\n", "");
        let err = load_ply(text.as_bytes()).unwrap_err();
        assert!(matches!(err, SplatError::MissingProperty(ref n) if n == "scale_1"), "{err}");
    }

    #[test]
    fn truncated_body_is_rejected() {
        let mut bytes = one_vertex_identity();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(load_ply(&bytes), Err(SplatError::ElementCount { count: 1, .. })));
    }

    #[test]
    fn malformed_header_is_rejected() {
        assert!(matches!(load_ply(b"plx\nend_header\n"), Err(SplatError::Header(_))));
        assert!(matches!(load_ply(b"ply\nformat ascii 1.0\nend_header\n"), Err(SplatError::Header(_))));
        assert!(matches!(load_ply(b"garbage"), Err(SplatError::Header(_))));
    }

    #[test]
    fn double_typed_known_property_rejected() {
        let text = "ply\nformat binary_little_endian 1.0\nelement vertex 0\nproperty double x\nend_header\n";
        assert!(matches!(load_ply(text.as_bytes()), Err(SplatError::PropertyType { .. })));
    }

    #[test]
    fn unknown_extra_properties_are_skipped() {
        let names = required_names();
        let mut text = String::from("ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty uchar tag\n");
        for n in &names {
            text.push_str(&format!("property float {n}\n"));
        }
        text.push_str("end_header\n");
        let mut bytes = text.into_bytes();
        bytes.push(7);
        for n in &names {
            let v: f32 = if n == "rot_0" { 1.0 } else if n == "x" { 2.5 } else { 0.0 };
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let scene = load_ply(&bytes).unwrap();
        assert_eq!(scene.splats()[0].mean.x, 2.5);
    }

    fn arb_splat(degree: u8) -> impl Strategy<Value = SplatRecord> {
        let k = sh::coeff_count(degree);
        (
            prop::array::uniform3(-10.0f32..10.0),
            prop::array::uniform4(-1.0f32..1.0),
            prop::array::uniform3(-6.0f32..0.0),
            -5.0f32..5.0,
            prop::collection::vec(prop::array::uniform3(-2.0f32..2.0), k),
        )
            .prop_filter_map("degenerate quaternion", |(m, q, s, o, c)| {
                let n = q.iter().map(|v| v * v).sum::<f32>().sqrt();
                if n < 0.1 {
                    return None;
                }
                let q = q.map(|v| v / n);
                let qn = q.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
                if (qn - 1.0).abs() > QUAT_EXACT_TOL_F32 {
                    return None;
                }
                Some(SplatRecord {
                    mean: Vector3::from(m.map(f64::from)),
                    rotation: q.map(f64::from),
                    log_scale: Vector3::from(s.map(f64::from)),
                    opacity_logit: o as f64,
                    sh: c.into_iter().map(|t| t.map(f64::from)).collect(),
                })
            })
    }

    const QUAT_EXACT_TOL_F32: f64 = super::super::QUAT_EXACT_TOL;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn random_scenes_round_trip_bytes(
            (degree, splats) in (0u8..=3).prop_flat_map(|d| (Just(d), prop::collection::vec(arb_splat(d), 0..=100)))
        ) {
            let scene = GaussianScene::new(splats, degree, None).unwrap();
            let bytes = save_ply(&scene);
            let back = load_ply(&bytes).unwrap();
            prop_assert_eq!(&back, &scene);
            prop_assert_eq!(save_ply(&back), bytes);
        }
    }
}
