use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use arsu_core::paths::HETERO_PATHS;
use arsu_core::sim::run_with_model;
use arsu_core::*;

fn mixed(head: &str) -> ScenarioConfig {
    let doc = format!(
        "{head}\n\
         [[users]]\nkind = \"native_dsrc\"\ncount = 2\n\
         [[users]]\nkind = \"native_cv2x\"\ncount = 2\n\
         [[users]]\nkind = \"nonnative_cell\"\ncount = 2\n\
         [[users]]\nkind = \"non_connected\"\n"
    );
    parse_scenario(&doc).unwrap()
}

fn outcome(config: &ScenarioConfig, seed: u64) -> SimOutcome {
    let model = config.latency_model(None).unwrap();
    run_with_model(config, &model, seed, true).unwrap()
}

#[test]
fn every_bsm_reaches_every_connected_peer_once() {
    let config = mixed("duration_ms = 3000\nscenario_speed_kmh = 90");
    let out = outcome(&config, 1);
    let connected = out.report.users.iter().filter(|u| u.kind.is_connected()).count();
    let tx = out.trace.iter().filter(|r| r.kind == "bsm_tx").count();
    let mut reached: BTreeMap<(String, i64), BTreeSet<String>> = BTreeMap::new();
    let mut copies: BTreeMap<(String, i64, String), usize> = BTreeMap::new();
    for d in out.deliveries.iter().filter(|d| !d.message_id.is_synthetic()) {
        let key = (d.message_id.to_string(), d.origin_at.as_micros());
        reached.entry(key.clone()).or_default().insert(d.receiver.to_string());
        *copies.entry((key.0, key.1, d.receiver.to_string())).or_default() += 1;
    }
    assert_eq!(reached.len(), tx);
    for (k, rx) in &reached {
        assert_eq!(rx.len(), connected - 1, "{k:?}");
    }
    // one copy per receiver: either direct or a single relay hop
    assert!(copies.values().all(|&n| n == 1));
    assert_eq!(out.report.metrics.duplicates_suppressed, 0);
}

#[test]
fn mixed_scenario_observes_all_ten_paths() {
    let config = mixed("duration_ms = 3000\nscenario_speed_kmh = 30\n[ipu]\nnoise_std_m = 0.5");
    let out = outcome(&config, 2);
    let want: Vec<u8> = HETERO_PATHS.iter().map(|p| p.number).collect();
    assert_eq!(out.report.metrics.observed_hetero_paths, want);
    let seen: BTreeSet<PathKind> = out.deliveries.iter().map(|d| d.path).collect();
    assert!(seen.contains(&PathKind::Direct(LinkTech::Dsrc)));
    assert!(seen.contains(&PathKind::Direct(LinkTech::Cv2x)));
    assert!(!seen.contains(&PathKind::Direct(LinkTech::CellMqtt)));
    for row in &out.report.scenario_matrix {
        assert!(row.observed.is_some(), "scenario {}", row.scenario);
        assert!(!row.flagged, "scenario {}", row.scenario);
    }
    out.report.check_invariants().unwrap();
}

#[test]
fn path_latencies_stay_under_the_ceiling_at_top_speed() {
    let config = mixed("duration_ms = 2000\nscenario_speed_kmh = 120\n[ipu]\nnoise_std_m = 0.5");
    let out = outcome(&config, 3);
    let m = &out.report.metrics;
    assert!(m.max_itt_compliant);
    assert_eq!(m.max_path_latency_ms, Some(382.741));
    for d in &out.deliveries {
        assert!(d.path_ms < 600.0);
        assert!(d.awareness_ms >= 0.0 && d.hold_ms >= 0.0);
    }
}

#[test]
fn camera_paths_carry_the_processing_overhead() {
    let config = mixed("duration_ms = 2000\nscenario_speed_kmh = 30\n[ipu]\nnoise_std_m = 0.0");
    let out = outcome(&config, 4);
    let cam: Vec<_> = out
        .deliveries
        .iter()
        .filter(|d| d.path == PathKind::Hetero(8) && !d.ghost)
        .collect();
    assert!(!cam.is_empty());
    for d in cam {
        assert!((d.path_ms - 304.169).abs() < 1e-9, "{}", d.path_ms);
    }
}

#[test]
fn per_endpoint_speeds_follow_the_model() {
    let doc = "duration_ms = 3000\nspeed_mode = \"max_endpoint\"\n\
        [[users]]\nkind = \"native_dsrc\"\nspeed_kmh = 0\n\
        [[users]]\nkind = \"native_dsrc\"\nspeed_kmh = 120\n\
        [[users]]\nkind = \"native_cv2x\"\nspeed_kmh = 45\n\
        [[users]]\nkind = \"nonnative_cell\"\nspeed_kmh = 90\n";
    let config = parse_scenario(doc).unwrap();
    let out = outcome(&config, 5);
    let model = LatencyModel::builtin();
    let h = |t, v| model.half_delay(t, v).unwrap().ms;
    let direct: Vec<_> = out
        .deliveries
        .iter()
        .filter(|d| d.path == PathKind::Direct(LinkTech::Dsrc))
        .collect();
    assert!(!direct.is_empty());
    for d in direct {
        assert!((d.path_ms - 2.0 * h(LinkTech::Dsrc, 120.0)).abs() <= 0.001);
    }
    for d in &out.deliveries {
        assert!(d.fidelity_error_ms() <= 0.001 + 1e-9, "{d:?}");
    }
    // u1 at 0 km/h to the CV2X user at 45 km/h
    let s1 = out
        .deliveries
        .iter()
        .find(|d| d.subject.as_str() == "u1" && d.path == PathKind::Hetero(1))
        .unwrap();
    assert!((s1.path_ms - (h(LinkTech::Dsrc, 0.0) + h(LinkTech::Cv2x, 45.0))).abs() <= 0.001);
}

#[test]
fn lossy_broker_drops_some_deliveries() {
    let config = mixed("duration_ms = 3000\nmqtt_drop_probability = 0.5");
    let out = outcome(&config, 6);
    assert!(out.report.mqtt.dropped > 0);
    let lossless = outcome(&mixed("duration_ms = 3000"), 6);
    assert_eq!(lossless.report.mqtt.dropped, 0);
    assert!(out.report.mqtt.deliveries < lossless.report.mqtt.deliveries);
}

#[test]
fn coverage_reaches_one_once_everyone_has_been_heard() {
    let config = mixed("duration_ms = 3000\n[ipu]\nnoise_std_m = 0.5");
    let out = outcome(&config, 7);
    let c = &out.report.metrics.coverage;
    assert_eq!(c.last, Some(1.0));
    assert!(c.mean.unwrap() > 0.5 && c.mean.unwrap() <= 1.0);
}

#[test]
fn users_outside_coverage_are_not_relayed() {
    let doc = "duration_ms = 1000\n\
        [[users]]\nkind = \"native_dsrc\"\n\
        [[users]]\nkind = \"native_cv2x\"\nnorth_m = 400\n\
        [[users]]\nkind = \"non_connected\"\nnorth_m = -400\n";
    let out = outcome(&parse_scenario(doc).unwrap(), 8);
    assert!(out.deliveries.is_empty());
    assert_eq!(out.report.ghosts.confirmations, 0);
}

#[test]
fn disabled_unit_leaves_direct_and_cloud_links() {
    let config = mixed("duration_ms = 1000\n[arsu]\nenabled = false");
    let out = outcome(&config, 9);
    assert!(!out.deliveries.is_empty());
    assert!(out
        .deliveries
        .iter()
        .all(|d| matches!(d.path, PathKind::Direct(_) | PathKind::Hetero(7))));
    assert!(out.deliveries.iter().any(|d| d.path == PathKind::Hetero(7)));
    assert!(out.report.mqtt.clients.iter().all(|c| c.client != "A-RSU"));
}

#[test]
fn scenario_file_with_custom_table() {
    let dir = std::env::temp_dir().join(format!("arsu-sim-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let mut csv = String::from("link,0,30,60,90,120\n");
    let labels = ["DSRC-CV2X", "DSRC-Cell", "CV2X-Cell", "Cell-Cell", "Cam-DSRC", "Cam-CV2X", "Cam-Cell"];
    for (label, row) in labels.iter().zip(latency::BUILTIN_DELAYS_MS.iter()) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
        csv.push_str(&format!("{label},{}\n", cells.join(",")));
    }
    std::fs::write(dir.join("table.csv"), csv).unwrap();
    let mut f = std::fs::File::create(dir.join("s.toml")).unwrap();
    writeln!(f, "duration_ms = 500\n[latency]\ntable_csv = \"table.csv\"\n[[users]]\nkind = \"native_dsrc\"").unwrap();
    let (config, model) = load_scenario(&dir.join("s.toml")).unwrap();
    let default = LatencyModel::builtin();
    assert_eq!(
        model.composed_delay(LinkTech::CellMqtt, LinkTech::CellMqtt, 60.0).unwrap(),
        default.composed_delay(LinkTech::CellMqtt, LinkTech::CellMqtt, 60.0).unwrap()
    );
    assert_eq!(config.duration_ms, 500.0);
    std::fs::remove_dir_all(dir).unwrap();
}
