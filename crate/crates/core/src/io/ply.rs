//! Binary little-endian PLY in the common 3DGS export layout.

use super::IoError;
use crate::model::{Gaussian3D, Scene, SH_COEFFS};
use nalgebra::Vector3;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

const REST_PER_CHANNEL: usize = SH_COEFFS - 1;

/// Vertex property names in file order.
pub fn expected_properties(with_rest: bool) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if with_rest {
        names.extend((0..3 * REST_PER_CHANNEL).map(|i| format!("f_rest_{i}")));
    }
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

fn gaussian_to_record(g: &Gaussian3D) -> Vec<f32> {
    let mut rec = Vec::with_capacity(62);
    rec.extend(g.mean.iter().map(|v| *v as f32));
    rec.extend([0.0f32; 3]);
    rec.extend(g.sh_coeffs[0].iter().map(|v| *v as f32));
    // f_rest is channel-major
    for c in 0..3 {
        rec.extend((1..SH_COEFFS).map(|k| g.sh_coeffs[k][c] as f32));
    }
    rec.push(g.opacity_logit as f32);
    rec.extend(g.log_scale.iter().map(|v| *v as f32));
    rec.extend(g.rotation.iter().map(|v| *v as f32));
    rec
}

fn record_to_gaussian(rec: &[f32], with_rest: bool) -> Gaussian3D {
    let v = |i: usize| rec[i] as f64;
    let mut sh = [[0.0; 3]; SH_COEFFS];
    sh[0] = [v(6), v(7), v(8)];
    let mut i = 9;
    if with_rest {
        for c in 0..3 {
            for coeff in sh.iter_mut().skip(1) {
                coeff[c] = v(i);
                i += 1;
            }
        }
    }
    Gaussian3D {
        mean: Vector3::new(v(0), v(1), v(2)),
        rotation: [v(i + 4), v(i + 5), v(i + 6), v(i + 7)],
        log_scale: Vector3::new(v(i + 1), v(i + 2), v(i + 3)),
        opacity_logit: v(i),
        sh_coeffs: sh,
    }
}

/// Highest degree with a nonzero coefficient in any Gaussian.
fn active_sh_degree(scene: &Scene) -> usize {
    (1..=crate::model::MAX_SH_DEGREE)
        .rev()
        .find(|l| {
            let band = l * l..(l + 1) * (l + 1);
            scene.gaussians.iter().any(|g| g.sh_coeffs[band.clone()].iter().flatten().any(|v| *v != 0.0))
        })
        .unwrap_or(0)
}

pub fn write_ply<W: Write>(scene: &Scene, mut out: W) -> Result<(), IoError> {
    let mut header = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", scene.len());
    for name in expected_properties(true) {
        header.push_str(&format!("property float {name}\n"));
    }
    header.push_str("end_header\n");
    out.write_all(header.as_bytes())?;
    let mut buf = Vec::with_capacity(scene.len() * 62 * 4);
    for g in &scene.gaussians {
        for v in gaussian_to_record(g) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

/// Parsed scene plus non-fatal warnings.
#[derive(Debug, Clone)]
pub struct PlyScene {
    pub scene: Scene,
    pub warnings: Vec<String>,
}

fn bad(msg: impl Into<String>) -> IoError {
    IoError::Format(msg.into())
}

pub fn read_ply<R: Read>(input: R) -> Result<PlyScene, IoError> {
    let mut reader = BufReader::new(input);
    let mut offset = 0usize;
    let mut line = String::new();
    let mut next_line = |reader: &mut BufReader<R>, line: &mut String| -> Result<bool, IoError> {
        line.clear();
        let n = reader.read_line(line)?;
        offset += n;
        Ok(n > 0)
    };

    if !next_line(&mut reader, &mut line)? || line.trim_end() != "ply" {
        return Err(bad("missing `ply` magic"));
    }
    let mut count: Option<usize> = None;
    let mut props = Vec::new();
    let mut in_vertex = false;
    loop {
        if !next_line(&mut reader, &mut line)? {
            return Err(bad("header ended without `end_header`"));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(bad(format!("binary_little_endian required, found `{fmt}`")));
                }
            }
            ["element", name, n] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(n.parse().map_err(|_| bad(format!("bad vertex count `{n}`")))?);
                } else if *n != "0" {
                    return Err(bad(format!("unexpected element `{name}`")));
                }
            }
            ["property", ty, name] if in_vertex => {
                if !matches!(*ty, "float" | "float32") {
                    return Err(bad(format!("property `{name}` has type `{ty}`, expected float")));
                }
                props.push(name.to_string());
            }
            _ => return Err(bad(format!("unrecognized header line `{}`", line.trim_end()))),
        }
    }
    let count = count.ok_or_else(|| bad("no vertex element"))?;
    let mut warnings = Vec::new();
    let with_rest = if props == expected_properties(true) {
        true
    } else if props == expected_properties(false) {
        warnings.push("no f_rest_* properties; higher-order SH set to zero".to_string());
        false
    } else {
        return Err(IoError::Layout {
            expected: expected_properties(true),
            found: props,
        });
    };

    let stride = props.len() * 4;
    let mut data = vec![0u8; count * stride];
    let mut filled = 0;
    while filled < data.len() {
        let n = reader.read(&mut data[filled..])?;
        if n == 0 {
            return Err(IoError::Truncated {
                offset: offset + filled,
                expected: offset + data.len(),
            });
        }
        filled += n;
    }
    let mut rec = vec![0f32; props.len()];
    let gaussians = data
        .chunks_exact(stride)
        .map(|chunk| {
            for (v, b) in rec.iter_mut().zip(chunk.chunks_exact(4)) {
                *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            }
            record_to_gaussian(&rec, with_rest)
        })
        .collect();
    let mut scene = Scene::new(gaussians, [0.0; 3]);
    scene.sh_degree = active_sh_degree(&scene);
    Ok(PlyScene { scene, warnings })
}

pub fn save_ply(scene: &Scene, path: &Path) -> Result<(), IoError> {
    let f = std::fs::File::create(path).map_err(|e| IoError::path(path, e))?;
    write_ply(scene, std::io::BufWriter::new(f))
}

/// Loads a scene and logs any warnings.
pub fn load_ply(path: &Path) -> Result<Scene, IoError> {
    let f = std::fs::File::open(path).map_err(|e| IoError::path(path, e))?;
    let parsed = read_ply(f)?;
    for w in &parsed.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(parsed.scene)
}
