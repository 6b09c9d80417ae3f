//! sRGB ↔ CIELAB conversions and colour differences.
//!
//! `cargo run --example lab_colors`

use lutfuse::colorspace::{lab_to_rgb, mean_ab, rgb_to_lab, ColorSpace, Image};
use lutfuse::metrics::delta_e;

fn main() -> lutfuse::Result<()> {
    for rgb in [[1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [0.5, 0.25, 0.1], [0.2, 0.6, 0.9]] {
        let lab = rgb_to_lab(rgb);
        let back = lab_to_rgb(lab);
        println!(
            "rgb {rgb:?} -> L {:7.3} a {:8.3} b {:8.3} -> rgb [{:.4}, {:.4}, {:.4}]",
            lab[0], lab[1], lab[2], back[0], back[1], back[2]
        );
    }

    let skin = Image::filled(8, 8, ColorSpace::Srgb, [0.85, 0.64, 0.52]);
    let warmer = Image::filled(8, 8, ColorSpace::Srgb, [0.88, 0.63, 0.48]);
    println!("mean a*/b* of skin patch: {:?}", mean_ab(&skin));
    println!("ΔE between skin and warmer skin: {:.3}", delta_e(&warmer, &skin)?);
    Ok(())
}
