use omnifd::optimizer::*;
use omnifd::units::dbm_to_watts;
use omnifd::*;
use std::time::Instant;

fn main() {
    for (l, surface) in [
        (64usize, SurfaceMode::Es),
        (32, SurfaceMode::Ms),
        (64, SurfaceMode::Ms),
    ] {
        let mut system = SystemConfig::default();
        system.num_elements = l;
        system.num_tx = 4;
        system.num_rx = 1;
        let geometry = build_geometry(&system).unwrap();
        let channels = sample_channels(&geometry, &system, 1100).unwrap();
        let mut config = OptConfig::new(
            Objective::MaximizeRate {
                si_cap: dbm_to_watts(-74.0),
            },
            surface,
        );
        config.seed = 0;
        let t = Instant::now();
        let r = maximize_rate(&system, &config, &channels).unwrap();
        println!(
            "L={l} {surface:?}: {:.2}s rate {:.3} iters {} status {:?}",
            t.elapsed().as_secs_f64(),
            r.rate,
            r.iters,
            r.status
        );
    }
}
