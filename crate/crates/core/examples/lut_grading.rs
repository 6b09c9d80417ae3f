//! Builds a colour grade as a 3D LUT, applies it with trilinear lookup and
//! round-trips it through `.cube` and the binary bank format.
//!
//! `cargo run --example lut_grading -- [out_dir]`

use std::fs;
use std::io::BufReader;
use std::path::PathBuf;

use lutfuse::colorspace::{ColorSpace, Image};
use lutfuse::lut3d::{lookup, mono_reg_lut, read_bank, read_cube, smooth_reg_lut, write_bank, write_cube, Lut3D, LutBank};

fn main() -> lutfuse::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    fs::create_dir_all(&out).map_err(|e| lutfuse::Error::Io { path: out.clone(), source: e })?;

    let warm = Lut3D::from_fn(17, |r, g, b| [r.powf(0.8), g.powf(0.95), b.powf(1.15)])?;
    println!("smoothness {:.5}, monotonicity {:.5}", smooth_reg_lut(&warm), mono_reg_lut(&warm));

    let ramp = Image::new(4, 1, ColorSpace::Srgb, vec![0.1, 0.1, 0.1, 0.4, 0.4, 0.4, 0.7, 0.7, 0.7, 1.0, 1.0, 1.0])?;
    for (src, dst) in ramp.pixels().zip(lookup(&warm, &ramp)?.pixels()) {
        println!("{src:?} -> [{:.3}, {:.3}, {:.3}]", dst[0], dst[1], dst[2]);
    }

    let cube = out.join("warm.cube");
    let mut text = Vec::new();
    write_cube(&mut text, &warm).expect("write to memory");
    fs::write(&cube, &text).map_err(|e| lutfuse::Error::Io { path: cube.clone(), source: e })?;
    let file = fs::File::open(&cube).map_err(|e| lutfuse::Error::Io { path: cube.clone(), source: e })?;
    let back = read_cube(BufReader::new(file), &cube)?;
    let err = back.lattice().iter().zip(warm.lattice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("{} ({} bins), max round-trip error {err:.2e}", cube.display(), back.dim());

    let bank = LutBank::new(vec![warm, Lut3D::identity(17)?])?;
    let path = out.join("bank.lf3d");
    write_bank(&path, &bank)?;
    println!("{} holds {} LUTs", path.display(), read_bank(&path)?.len());
    Ok(())
}
