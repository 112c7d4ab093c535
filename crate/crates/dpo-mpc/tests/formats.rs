use dpo_mpc::bundle_file::{self, BundleError};
use dpo_mpc::config;
use dpo_mpc::trace_file::{traces_from_json, traces_to_json, write_csv};
use dpo_mpc_core::sim::{monte_carlo, ControllerKind, SimConfig};
use dpo_mpc_core::{synthesize, ControllerBundle, FuzzyMjsModel};

mod common;

fn scalar() -> (FuzzyMjsModel, SimConfig, ControllerBundle) {
    let cfg = config::parse(common::SCALAR_TOML).unwrap();
    let model = cfg.build_model().unwrap();
    let sim = cfg.sim_config(&model).unwrap();
    let bundle = synthesize(&model, &cfg.synthesis_options()).unwrap();
    (model, sim, bundle)
}

#[test]
fn bundle_round_trips_exactly() {
    let (_, _, bundle) = scalar();
    let text = bundle_file::to_json(&bundle);
    assert_eq!(bundle_file::from_json(&text).unwrap(), bundle);
    assert_eq!(bundle_file::to_json(&bundle_file::from_json(&text).unwrap()), text);
}

#[test]
fn bundle_files_are_versioned() {
    let (_, _, bundle) = scalar();
    let text = bundle_file::to_json(&bundle).replace("\"version\": 1", "\"version\": 2");
    assert!(matches!(bundle_file::from_json(&text), Err(BundleError::Format { version: 2, .. })));
    assert!(matches!(bundle_file::from_json("{}"), Err(BundleError::Json(_))));
}

#[test]
fn bundle_file_io_reports_the_path() {
    let err = bundle_file::read(std::path::Path::new("/nonexistent/b.json")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/b.json"));
}

#[test]
fn traces_round_trip_through_json() {
    let (model, sim, bundle) = scalar();
    for controller in [ControllerKind::Dpo, ControllerKind::OpenLoop] {
        let report = monte_carlo(&model, &bundle, &SimConfig { controller, ..sim.clone() }).unwrap();
        for timing in [false, true] {
            let back = traces_from_json(&traces_to_json(&report.traces, timing)).unwrap();
            assert_eq!(back, report.traces);
        }
    }
}

#[test]
fn failed_runs_round_trip_too() {
    let (model, sim, bundle) = scalar();
    let far = SimConfig { x0: dpo_mpc_core::Vector::from_element(1, 50.0), runs: 2, ..sim };
    let report = monte_carlo(&model, &bundle, &far).unwrap();
    assert_eq!(report.failures.len(), 2);
    assert_eq!(traces_from_json(&traces_to_json(&report.traces, false)).unwrap(), report.traces);
}

#[test]
fn csv_has_the_documented_columns() {
    let (model, sim, bundle) = scalar();
    let report = monte_carlo(&model, &bundle, &sim).unwrap();
    let mut buf = Vec::new();
    write_csv(&mut buf, &report.traces, 1, 1, false).unwrap();
    let mut rd = csv::Reader::from_reader(buf.as_slice());
    let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
    for col in ["run", "step", "mode", "x1", "u", "eta1", "branch", "V", "cost", "in_terminal", "op5_iterations"] {
        assert!(header.iter().any(|h| h == col), "missing {col} in {header:?}");
    }
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), sim.runs * (sim.horizon + 1));
    let first = &rows[0];
    assert_eq!((&first[0], &first[1], &first[2], &first[3]), ("0", "0", "1", "1.5"));
    assert_eq!(&first[6], "perturbed");
    let last = rows.last().unwrap();
    assert_eq!((&last[0], &last[1], &last[6]), ("7", "20", "final"));
}
