use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use owc_mcrt_cli::{MetricsFile, RunManifest, SCHEMA_VERSION};

const BIN: &str = env!("CARGO_BIN_EXE_owc-mcrt");

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn owc(args: &[&str]) -> std::process::Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("OWC_MCRT_WORKERS")
        .output()
        .expect("spawn owc-mcrt")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

struct Baseline {
    _dir: tempfile::TempDir,
    out: PathBuf,
}

/// One small IRS-ON run shared by the output-format tests.
fn baseline() -> &'static Baseline {
    static B: OnceLock<Baseline> = OnceLock::new();
    B.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let scene = config("paper_room_vl.cfg");
        let o = owc(&[
            "--scene",
            scene.to_str().unwrap(),
            "--rays-per-chip",
            "150",
            "--workers",
            "1",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        Baseline { _dir: dir, out }
    })
}

fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn metrics_json_round_trips_with_schema_version() {
    let text = read(&baseline().out.join("metrics.json"));
    let m: MetricsFile = serde_json::from_str(&text).unwrap();
    assert_eq!(m.schema_version, SCHEMA_VERSION);
    assert_eq!(m.detectors.len(), 3);
    let again = serde_json::to_string_pretty(&m).unwrap() + "\n";
    assert_eq!(again, text);
    assert!(m.energy.imbalance() < 1e-9);
}

#[test]
fn cir_csv_sums_to_dc_gain_and_kappa_columns_add_up() {
    let b = baseline();
    let m: MetricsFile = serde_json::from_str(&read(&b.out.join("metrics.json"))).unwrap();
    for d in &m.detectors {
        let (header, rows) = parse_csv(&read(&b.out.join(format!("cir_{}.csv", d.label))));
        assert_eq!(header[..2], ["bin_time_ns", "power_w"]);
        assert_eq!(header.len(), 2 + d.metrics.max_kappa as usize + 1);
        assert_eq!(rows.len(), d.metrics.n_bins);
        let total: f64 = rows.iter().map(|r| r[1]).sum();
        approx::assert_relative_eq!(total, d.metrics.dc_gain, max_relative = 1e-12);
        for r in &rows {
            let by_kappa: f64 = r[2..].iter().sum();
            approx::assert_relative_eq!(by_kappa, r[1], max_relative = 1e-12, epsilon = 1e-300);
        }
    }
}

#[test]
fn cfr_and_capacity_files_have_expected_shape() {
    let b = baseline();
    let m: MetricsFile = serde_json::from_str(&read(&b.out.join("metrics.json"))).unwrap();
    for d in &m.detectors {
        let (header, rows) = parse_csv(&read(&b.out.join(format!("cfr_{}.csv", d.label))));
        assert_eq!(header, ["freq_hz", "magnitude", "phase_rad"]);
        assert_eq!(rows.len(), d.metrics.n_fft);
        let dc = rows.iter().find(|r| r[0] == 0.0).unwrap();
        approx::assert_relative_eq!(dc[1], d.metrics.dc_gain, max_relative = 1e-9);

        let (header, rows) = parse_csv(&read(&b.out.join(format!("capacity_{}.csv", d.label))));
        assert_eq!(header, ["snr_db", "bits_per_s"]);
        assert_eq!(rows.len(), 21);
        assert!(rows.windows(2).all(|w| w[1][1] >= w[0][1]));
    }
}

#[test]
fn manifest_rerun_is_byte_identical_across_worker_counts() {
    let b = baseline();
    let manifest_path = b.out.join("manifest.json");
    let manifest: RunManifest = serde_json::from_str(&read(&manifest_path)).unwrap();
    assert_eq!(manifest.workers, Some(1));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("again");
    let o = owc(&[
        "--manifest",
        manifest_path.to_str().unwrap(),
        "--workers",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for entry in std::fs::read_dir(&b.out).unwrap() {
        let name = entry.unwrap().file_name();
        if name == "manifest.json" {
            continue;
        }
        assert_eq!(
            std::fs::read(b.out.join(&name)).unwrap(),
            std::fs::read(out.join(&name)).unwrap(),
            "{name:?} differs"
        );
    }
}

#[test]
fn missing_scene_file_exits_1_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = owc(&["--scene", "no/such/room.cfg", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no/such/room.cfg"));
}

#[test]
fn zero_rays_exits_1_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let scene = config("paper_room_vl.cfg");
    let o = owc(&[
        "--scene",
        scene.to_str().unwrap(),
        "--rays-per-chip",
        "0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rays_per_chip"));
}

#[test]
fn bad_material_reference_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let text = read(&config("paper_room_vl.cfg")).replace("walls = \"cobalt_green_paint\"", "walls = \"chalk\"");
    let scene = dir.path().join("bad.cfg");
    std::fs::write(&scene, text.replace("../crates/", &format!("{}/", config("../crates").display()))).unwrap();
    let o = owc(&["--scene", scene.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("chalk"));
}

#[test]
fn unwritable_output_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let scene = config("paper_room_vl.cfg");
    let o = owc(&[
        "--scene",
        scene.to_str().unwrap(),
        "--rays-per-chip",
        "150",
        "--out",
        blocker.join("sub").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn empty_detector_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let scene = config("paper_room_vl.cfg");
    let o = owc(&[
        "--scene",
        scene.to_str().unwrap(),
        "--irs",
        "off",
        "--rays-per-chip",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty channel"));
}
