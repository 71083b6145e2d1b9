//! Tiled inference: window placement, coverage and the blended prediction
//! of a freshly initialised junior network.
//!
//! cargo run --example sliding_window

use segkc::config::RunConfig;
use segkc::data::{generate_scene, SceneSpec};
use segkc::eval::{argmax_labels, sliding_window_predict, window_coverage, window_starts, Blend};
use segkc::models::DualModel;
use segkc::Tensor;

fn main() -> segkc::Result<()> {
    println!("starts for 50 px, window 16, stride 8: {:?}", window_starts(50, 16, 8));
    let cover = window_coverage(12, 12, 8, 3);
    for row in cover.chunks(12) {
        println!("{row:?}");
    }

    let config = RunConfig { image_height: 48, image_width: 40, ..RunConfig::default() };
    let junior = DualModel::new(config.dual_config(), 0)?.into_junior();
    let spec = SceneSpec { height: 48, width: 40, ..config.scene_spec() };
    let image = Tensor::stack(&[generate_scene(&spec, 0).image])?;
    let predict = |x: &Tensor| junior.predict(x);
    let whole = predict(&image)?;
    for blend in [Blend::Logits, Blend::Probabilities] {
        let tiled = sliding_window_predict(&predict, &image, 24, 12, blend)?;
        let agree = argmax_labels(&tiled)?
            .data()
            .iter()
            .zip(argmax_labels(&whole)?.data())
            .filter(|(a, b)| a == b)
            .count();
        println!("{blend:?}: {agree}/{} pixels agree with whole-image prediction", 48 * 40);
    }
    Ok(())
}
