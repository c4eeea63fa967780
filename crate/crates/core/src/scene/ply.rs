//! Binary little-endian PLY cloud files in the common splatting layout,
//! extended with thermal attributes.
//!
//! Per vertex, in order: `x y z`, `nx ny nz` (zeros), `f_dc_0..2`,
//! `f_rest_*` (channel-major: all red rest coefficients, then green, then
//! blue), `opacity`, `scale_0..2`, `rot_0..3` (w, x, y, z), then
//! `thermal_dc_0` and `thermal_rest_*`. RGB attributes are omitted for
//! thermal-only clouds and thermal attributes for RGB-only clouds.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::model::{Gaussian3D, GaussianCloud, Modality};
use crate::sh;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    /// 64-bit; round trips are exact.
    #[default]
    Double,
    /// 32-bit, as most splatting viewers expect.
    Float,
}

impl Precision {
    fn name(self) -> &'static str {
        match self {
            Precision::Double => "double",
            Precision::Float => "float",
        }
    }
}

/// Attribute names in file order.
pub fn attribute_names(cloud: &GaussianCloud) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz"].map(String::from).into();
    if cloud.has(Modality::Rgb) {
        names.extend((0..3).map(|c| format!("f_dc_{c}")));
        let rest = sh::coeff_count(cloud.sh_degree_rgb) - 1;
        names.extend((0..3 * rest).map(|j| format!("f_rest_{j}")));
    }
    names.push("opacity".into());
    names.extend((0..3).map(|a| format!("scale_{a}")));
    names.extend((0..4).map(|a| format!("rot_{a}")));
    if cloud.has(Modality::Thermal) {
        names.push("thermal_dc_0".into());
        let rest = sh::coeff_count(cloud.sh_degree_thermal) - 1;
        names.extend((0..rest).map(|j| format!("thermal_rest_{j}")));
    }
    names
}

fn vertex_values(cloud: &GaussianCloud, g: &Gaussian3D, out: &mut Vec<f64>) {
    out.extend(g.position.iter());
    out.extend([0.0; 3]);
    if let Some(c) = &g.sh_rgb {
        let k = sh::coeff_count(cloud.sh_degree_rgb);
        out.extend(&c[..3]);
        for ch in 0..3 {
            out.extend((1..k).map(|i| c[i * 3 + ch]));
        }
    }
    out.push(g.opacity_logit);
    out.extend(g.log_scale.iter());
    out.extend(g.rotation);
    if let Some(t) = &g.sh_thermal {
        out.extend(t);
    }
}

pub fn write_cloud<W: Write>(mut w: W, cloud: &GaussianCloud, precision: Precision) -> Result<()> {
    let names = attribute_names(cloud);
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header += &format!("element vertex {}\n", cloud.len());
    for n in &names {
        header += &format!("property {} {n}\n", precision.name());
    }
    header += "end_header\n";
    let io = |e| Error::io("<cloud>", e);
    w.write_all(header.as_bytes()).map_err(io)?;
    let mut vals = Vec::with_capacity(names.len());
    let mut bytes = Vec::with_capacity(names.len() * 8);
    for g in &cloud.gaussians {
        vals.clear();
        bytes.clear();
        vertex_values(cloud, g, &mut vals);
        for v in &vals {
            match precision {
                Precision::Double => bytes.extend(v.to_le_bytes()),
                Precision::Float => bytes.extend((*v as f32).to_le_bytes()),
            }
        }
        w.write_all(&bytes).map_err(io)?;
    }
    Ok(())
}

pub fn export_cloud(cloud: &GaussianCloud, path: &Path, precision: Precision) -> Result<()> {
    let mut buf = Vec::new();
    write_cloud(&mut buf, cloud, precision)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Scalar {
    F32,
    F64,
    U8,
    I32,
    U32,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            "uchar" | "uint8" => Scalar::U8,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::U8 => 1,
            Scalar::F32 | Scalar::I32 | Scalar::U32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b.try_into().unwrap()),
            Scalar::U8 => b[0] as f64,
            Scalar::I32 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b.try_into().unwrap()) as f64,
        }
    }
}

pub fn read_cloud<R: Read>(r: R, source: &Path) -> Result<GaussianCloud> {
    let mut r = BufReader::new(r);
    let bad = |line: usize, msg: String| Error::parse(source, Some(line), msg);
    let mut line = String::new();
    let mut line_no = 0;
    let mut next_line = |r: &mut BufReader<R>, line: &mut String| -> Result<usize> {
        line.clear();
        let n = r.read_line(line).map_err(|e| Error::io(source, e))?;
        line_no += 1;
        if n == 0 {
            return Err(Error::parse(source, Some(line_no), "unexpected end of header"));
        }
        Ok(line_no)
    };
    let ln = next_line(&mut r, &mut line)?;
    if line.trim_end() != "ply" {
        return Err(bad(ln, "missing 'ply' magic".into()));
    }
    let mut count = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut format_ok = false;
    loop {
        let ln = next_line(&mut r, &mut line)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", "1.0"] => format_ok = true,
            ["format", other, ..] => return Err(bad(ln, format!("unsupported format '{other}'"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| bad(ln, format!("bad vertex count '{n}'")))?);
            }
            ["element", other, ..] => return Err(bad(ln, format!("unexpected element '{other}'"))),
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| bad(ln, format!("unsupported property type '{ty}'")))?;
                props.push((name.to_string(), ty));
            }
            _ => return Err(bad(ln, format!("malformed header line '{}'", line.trim_end()))),
        }
    }
    if !format_ok {
        return Err(bad(line_no, "missing binary_little_endian format line".into()));
    }
    let count = count.ok_or_else(|| bad(line_no, "missing vertex element".into()))?;
    let find = |name: &str| props.iter().position(|(n, _)| n == name);
    let require = |name: &str| find(name).ok_or_else(|| Error::parse(source, None, format!("missing attribute '{name}'")));
    let series = |prefix: &str| -> Vec<usize> {
        let mut v = Vec::new();
        while let Some(i) = find(&format!("{prefix}{}", v.len())) {
            v.push(i);
        }
        v
    };

    let pos = [require("x")?, require("y")?, require("z")?];
    let opacity = require("opacity")?;
    let scale = [require("scale_0")?, require("scale_1")?, require("scale_2")?];
    let rot = [require("rot_0")?, require("rot_1")?, require("rot_2")?, require("rot_3")?];
    let f_dc = series("f_dc_");
    let f_rest = series("f_rest_");
    let th_dc = series("thermal_dc_");
    let th_rest = series("thermal_rest_");
    let has_rgb = !f_dc.is_empty();
    let has_th = !th_dc.is_empty();
    if has_rgb && (f_dc.len() != 3 || f_rest.len() % 3 != 0) {
        return Err(Error::parse(source, None, format!("attribute mismatch: {} f_dc and {} f_rest", f_dc.len(), f_rest.len())));
    }
    if !has_rgb && !f_rest.is_empty() {
        return Err(Error::parse(source, None, "f_rest without f_dc"));
    }
    if has_th && th_dc.len() != 1 {
        return Err(Error::parse(source, None, format!("attribute mismatch: {} thermal_dc", th_dc.len())));
    }
    if !has_th && !th_rest.is_empty() {
        return Err(Error::parse(source, None, "thermal_rest without thermal_dc"));
    }
    let k_rgb = f_rest.len() / 3 + 1;
    let deg_rgb = if has_rgb {
        sh::degree_for_count(k_rgb).ok_or_else(|| Error::parse(source, None, format!("{} f_rest attributes match no SH degree", f_rest.len())))?
    } else {
        0
    };
    let k_th = th_rest.len() + 1;
    let deg_th = if has_th {
        sh::degree_for_count(k_th)
            .ok_or_else(|| Error::parse(source, None, format!("{} thermal_rest attributes match no SH degree", th_rest.len())))?
    } else {
        0
    };

    let offsets: Vec<usize> = props
        .iter()
        .scan(0, |o, (_, t)| {
            let cur = *o;
            *o += t.size();
            Some(cur)
        })
        .collect();
    let stride: usize = props.iter().map(|(_, t)| t.size()).sum();
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|e| Error::io(source, e))?;
    if body.len() != stride * count {
        return Err(Error::parse(
            source,
            None,
            format!("expected {} bytes of vertex data, found {}", stride * count, body.len()),
        ));
    }
    let gaussians = body
        .chunks_exact(stride)
        .map(|v| {
            let get = |i: usize| props[i].1.read(&v[offsets[i]..offsets[i] + props[i].1.size()]);
            let sh_rgb = has_rgb.then(|| {
                let mut c = vec![0.0; k_rgb * 3];
                for ch in 0..3 {
                    c[ch] = get(f_dc[ch]);
                    for i in 1..k_rgb {
                        c[i * 3 + ch] = get(f_rest[ch * (k_rgb - 1) + i - 1]);
                    }
                }
                c
            });
            let sh_thermal = has_th.then(|| std::iter::once(th_dc[0]).chain(th_rest.iter().copied()).map(get).collect());
            Gaussian3D {
                position: Vector3::new(get(pos[0]), get(pos[1]), get(pos[2])),
                log_scale: Vector3::new(get(scale[0]), get(scale[1]), get(scale[2])),
                rotation: rot.map(get),
                opacity_logit: get(opacity),
                sh_rgb,
                sh_thermal,
            }
        })
        .collect();
    let mut mods = Vec::new();
    if has_rgb {
        mods.push(Modality::Rgb);
    }
    if has_th {
        mods.push(Modality::Thermal);
    }
    if mods.is_empty() {
        return Err(Error::parse(source, None, "cloud carries neither RGB nor thermal attributes"));
    }
    GaussianCloud::new(gaussians, &mods, deg_rgb, deg_th).map_err(|e| Error::parse(source, None, e.to_string()))
}

pub fn import_cloud(path: &Path) -> Result<GaussianCloud> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_cloud(f, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{logit, normalize_quaternion};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(seed: u64, n: usize, mods: &[Modality], dr: usize, dt: usize) -> GaussianCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gs = (0..n)
            .map(|_| Gaussian3D {
                position: Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
                log_scale: Vector3::from_fn(|_, _| rng.random_range(-4.0..0.0)),
                rotation: normalize_quaternion(std::array::from_fn(|_| rng.random_range(-1.0..1.0))),
                opacity_logit: logit(rng.random_range(0.01..0.99)),
                sh_rgb: mods
                    .contains(&Modality::Rgb)
                    .then(|| (0..sh::coeff_count(dr) * 3).map(|_| rng.random_range(-1.0..1.0)).collect()),
                sh_thermal: mods
                    .contains(&Modality::Thermal)
                    .then(|| (0..sh::coeff_count(dt)).map(|_| rng.random_range(-1.0..1.0)).collect()),
            })
            .collect();
        GaussianCloud::new(gs, mods, dr, dt).unwrap()
    }

    fn round_trip(c: &GaussianCloud) -> GaussianCloud {
        let mut buf = Vec::new();
        write_cloud(&mut buf, c, Precision::Double).unwrap();
        read_cloud(&buf[..], Path::new("mem.ply")).unwrap()
    }

    #[test]
    fn both_layouts_round_trip() {
        for mods in [&[Modality::Rgb][..], &[Modality::Thermal], &[Modality::Rgb, Modality::Thermal]] {
            let c = random_cloud(1, 17, mods, 2, 1);
            assert_eq!(round_trip(&c), c);
        }
        let rgb = random_cloud(2, 3, &[Modality::Rgb], 3, 0);
        assert!(!attribute_names(&rgb).iter().any(|n| n.starts_with("thermal")));
    }

    #[test]
    fn attribute_count_for_degree_3_0() {
        let c = random_cloud(3, 2, &[Modality::Rgb, Modality::Thermal], 3, 0);
        // position 3 + normals 3 + dc 3 + opacity 1 + scale 3 + rotation 4 = 17
        assert_eq!(attribute_names(&c).len(), 17 + 45 + 1);
    }

    #[test]
    fn float_export_reads_back_rounded() {
        let c = random_cloud(4, 5, &[Modality::Rgb], 1, 0);
        let mut buf = Vec::new();
        write_cloud(&mut buf, &c, Precision::Float).unwrap();
        let back = read_cloud(&buf[..], Path::new("f.ply")).unwrap();
        assert_eq!(back.gaussians[2].opacity_logit, c.gaussians[2].opacity_logit as f32 as f64);
    }

    #[test]
    fn malformed_files() {
        let p = Path::new("bad.ply");
        assert!(read_cloud(&b"plx\n"[..], p).is_err());
        let c = random_cloud(5, 2, &[Modality::Rgb], 0, 0);
        let mut buf = Vec::new();
        write_cloud(&mut buf, &c, Precision::Double).unwrap();
        buf.pop();
        assert!(matches!(read_cloud(&buf[..], p), Err(Error::Parse { .. })));
        let text = String::from_utf8_lossy(&buf).replace("property double opacity\n", "");
        assert!(read_cloud(text.as_bytes(), p).is_err());
        let hdr = b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n";
        assert!(read_cloud(&hdr[..], p).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(seed in 0u64..10_000, n in 1usize..20, dr in 0usize..=3, dt in 0usize..=3) {
            let c = random_cloud(seed, n, &[Modality::Rgb, Modality::Thermal], dr, dt);
            prop_assert_eq!(round_trip(&c), c);
        }
    }
}
