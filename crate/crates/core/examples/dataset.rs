//! Renders a few synthetic scenes to PPM/PGM and prints the split and the
//! class balance.
//!
//! cargo run --example dataset -- out/scenes

use segkc::data::{make_split, pnm, SceneDataset, SceneSpec};
use segkc::IGNORE_INDEX;

fn main() -> segkc::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/scenes".into());
    let out = std::path::Path::new(&out);
    std::fs::create_dir_all(out).map_err(|e| segkc::Error::io(out, e))?;

    let spec = SceneSpec::default();
    let dataset = SceneDataset::new(spec.clone(), 1464)?;
    let split = make_split(1464, "1/8", 0)?;
    println!("{} labeled of {}; first ids {:?}", split.labeled_ids.len(), 1464, &split.labeled_ids[..6]);

    let mut counts = vec![0usize; spec.num_classes];
    for id in 0..8 {
        let s = dataset.sample(id);
        for &l in s.labels.data() {
            if l != IGNORE_INDEX {
                counts[l as usize] += 1;
            }
        }
        pnm::write(&out.join(format!("img_{id:05}.ppm")), &pnm::encode_ppm(&s.image)?)?;
        pnm::write(&out.join(format!("lbl_{id:05}.pgm")), &pnm::encode_pgm(&s.labels)?)?;
    }
    println!("pixels per class over 8 scenes: {counts:?}");
    println!("wrote 8 scenes to {}", out.display());
    Ok(())
}
