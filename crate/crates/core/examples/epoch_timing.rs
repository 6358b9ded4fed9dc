//! Times simulation and two training epochs: `cargo run --release --example epoch_timing -- [n_images] [encoder_width]`.

use std::time::Instant;

use hetem::model::ModelConfig;
use hetem::simulator::{build_dataset, make_phantoms, CtfSource, DatasetConfig, PhantomSpec};
use hetem::trainer::{TrainConfig, Trainer};
use rand::SeedableRng;

fn main() -> hetem::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(256);
    let width: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(16);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let vols = make_phantoms(&PhantomSpec::bimodal(32, 15.08), &mut rng)?;
    let t0 = Instant::now();
    let stack = build_dataset(
        &vols,
        &DatasetConfig {
            n_images: n,
            snr_db: -10.0,
            t_max: 2.0,
            ctf: CtfSource::default(),
            seed: 1,
            fourier_pad: 2,
        },
    )?;
    println!("simulate {:.2}s snr {:?}", t0.elapsed().as_secs_f64(), stack.achieved_snr_db());
    let mut mc = ModelConfig::new(32, 2.0);
    mc.encoder_width = width;
    let mut tc = TrainConfig::new(32, 2, 1);
    tc.snr_db_est = Some(-10.0);
    let mut tr = Trainer::<f32>::new(&stack, &mc, &tc)?;
    for _ in 0..2 {
        let row = tr.run_epoch()?;
        println!("{row:?}");
    }
    Ok(())
}
