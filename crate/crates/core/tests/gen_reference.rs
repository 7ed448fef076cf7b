//! Regenerates the bundled reference ROI and its annotation.
//! Run with: cargo test -p cephscale --test gen_reference -- --ignored

use std::path::Path;

#[test]
#[ignore]
fn regenerate_bundled_reference() {
    let (roi, ann) = cephscale::synth::make_reference().unwrap();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    std::fs::create_dir_all(&dir).unwrap();
    cephscale::io::save_pgm(&roi, &dir.join("reference.pgm")).unwrap();
    std::fs::write(dir.join("reference.txt"), ann.to_text()).unwrap();
    println!(
        "reference ROI {}x{}, corners {:?} / {:?}, width {}",
        roi.width(),
        roi.height(),
        ann.upper,
        ann.lower,
        ann.scale_width_px
    );
}
