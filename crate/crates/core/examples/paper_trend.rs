//! Run the case-study room with the IRS ON and OFF and print the channel
//! metrics of each detector.
//!
//! ```text
//! cargo run --release -p owc-mcrt --example paper_trend -- vl 2000 [panels]
//! ```

use std::time::Instant;

use owc_mcrt::channel::analyze;
use owc_mcrt::config::IrsCoverage;
use owc_mcrt::presets::{self, Band};
use owc_mcrt::scene::{build_scene, set_irs_state, IrsState};
use owc_mcrt::tracer::{run_simulation, TraceParams};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let band: Band = args.get(1).map_or("vl", String::as_str).parse().expect("band");
    let rays: u64 = args.get(2).map_or(1000, |s| s.parse().expect("rays"));
    let panels = args.get(3).is_some_and(|s| s == "panels");

    let mut cfg = presets::paper_room(band).expect("preset");
    if panels {
        cfg.irs.as_mut().unwrap().coverage = IrsCoverage::Panels(presets::paper_panels());
    }
    let base = build_scene(&cfg).expect("scene");
    let params = TraceParams {
        rays_per_chip: rays,
        ..TraceParams::for_band(band)
    };
    for state in [IrsState::On, IrsState::Off] {
        let scene = set_irs_state(&base, state);
        let start = Instant::now();
        let result = run_simulation(&scene, &params).expect("trace");
        println!(
            "{band} IRS {state}: {:.1} s, {} segments, imbalance {:.2e}",
            start.elapsed().as_secs_f64(),
            result.audit.segments,
            result.audit.imbalance()
        );
        for (d, label) in result.detector_labels.iter().enumerate() {
            let ledger = result.merged_for_detector(d);
            match analyze(&ledger, params.bin_width_ns) {
                Ok(a) => {
                    let m = a.metrics;
                    println!(
                        "  {label}: H {:.4e}  tau0 {:.3}  rms {:.3}  rho {:.3}  kmax {}  hits {}",
                        m.dc_gain, m.mean_delay_ns, m.rms_delay_ns, m.flatness, m.max_kappa, m.hits
                    );
                }
                Err(e) => println!("  {label}: {e}"),
            }
        }
    }
}
