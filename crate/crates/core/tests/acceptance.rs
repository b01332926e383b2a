//! End-to-end acceptance run: one PASS/FAIL line per criterion.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{pair_auc, random_rows, random_weights, worst_grid_gap};
use nppsim::chacha::{self, make_nonce, ChaChaKey, NonceLedger};
use nppsim::coverage::{geo_distance, num_strips, plan_in_frame, total_distance, GeoPoint, Orientation};
use nppsim::fedlearn::{
    binary_roc_auc, evaluate, fedavg, loss_and_gradient, local_train, Dataset, LocalUpdate, ModelWeights,
    TrainParams,
};
use nppsim::orchestrator::report::emit_report;
use nppsim::orchestrator::{global_exchange, run_simulation, QkdConfig, SimConfig, SimulationReport};
use nppsim::qkd::{bb84_exchange, otp_decrypt, otp_encrypt, EvePolicy, GateDecision, KeyMaterial};
use nppsim::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn hex(s: &str) -> Vec<u8> {
    (0..s.len()).step_by(2).map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap()).collect()
}

const BLOCK_HEX: &str = "10f1e7e4d13b5915500fdd1fa32071c4c7d1f4c733c068030422aa9ac3d46c4e\
                         d2826446079faa0914c2d705d98b02a2b5129cd1de164eb9cbd083e8a2503c4e";
const CIPHER_HEX: &str = "6e2e359a2568f98041ba0728dd0d6981e97e7aec1d4360c20a27afccfd9fae0b\
                          f91b65c5524733ab8f593dabcd62b3571639d624e65152ab8f530c359f0861d8\
                          07ca0dbf500d6a6156a38e088a22b65e52bc514d16ccf806818ce91ab7793736\
                          5af90bbf74a35be6b40b8eedf2785e42874d";
const SUNSCREEN: &[u8] = b"Ladies and Gentlemen of the class of '99: If I could offer you only one tip for the future, sunscreen would be it.";

fn rfc_vectors() -> Check {
    let start = Instant::now();
    let key: [u8; 32] = std::array::from_fn(|i| i as u8);
    let block = chacha::chacha20_block(&key, 1, &[0, 0, 0, 0x09, 0, 0, 0, 0x4a, 0, 0, 0, 0]);
    ensure(block.to_vec() == hex(BLOCK_HEX), || "block function mismatch".into())?;
    let nonce = [0, 0, 0, 0, 0, 0, 0, 0x4a, 0, 0, 0, 0];
    let frame = NonceLedger::new()
        .encrypt(&ChaChaKey::new(key, nonce), SUNSCREEN)
        .map_err(|e| e.to_string())?;
    ensure(frame.ciphertext == hex(CIPHER_HEX), || "encryption mismatch".into())?;
    let plain = chacha::decrypt(&ChaChaKey::new(key, nonce), &frame).map_err(|e| e.to_string())?;
    ensure(plain == SUNSCREEN, || "decryption mismatch".into())?;
    let t = start.elapsed();
    ensure(t < Duration::from_secs(1), || format!("took {t:?}"))?;
    Ok(format!("block and encryption vectors byte-exact in {t:?}"))
}

fn bb84_statistics() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let clean = bb84_exchange(20_000, &EvePolicy::none(), 0.0, &mut rng).map_err(|e| e.to_string())?;
    let tapped = bb84_exchange(20_000, &EvePolicy::new(1.0).unwrap(), 0.0, &mut rng).map_err(|e| e.to_string())?;
    let q0 = clean.estimate.ratio;
    let q1 = tapped.estimate.ratio;
    let sifted = [clean.sifted_fraction(), tapped.sifted_fraction()];
    let info = tapped.eve_information();
    ensure(q0 == 0.0, || format!("no-eve QBER {q0}"))?;
    ensure((q1 - 0.25).abs() <= 0.02, || format!("eve QBER {q1}"))?;
    ensure(sifted.iter().all(|s| (s - 0.5).abs() <= 0.02), || format!("sifted {sifted:?}"))?;
    ensure((info - 0.189).abs() <= 0.02, || format!("eve information {info}"))?;
    let t = start.elapsed();
    ensure(t < Duration::from_secs(5), || format!("took {t:?}"))?;
    Ok(format!(
        "QBER 0 / {q1:.4}, sifted {:.4} / {:.4}, eve information {info:.4} bits in {t:?}",
        sifted[0], sifted[1]
    ))
}

fn roundtrips() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..1000 {
        let len = rng.random_range(0..512);
        let msg: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        let pad: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        let ct = otp_encrypt(&msg, &mut KeyMaterial::from_bytes(&pad)).map_err(|e| e.to_string())?;
        let back = otp_decrypt(&ct, &mut KeyMaterial::from_bytes(&pad)).map_err(|e| e.to_string())?;
        ensure(back == msg, || format!("otp case {case}"))?;

        let key: [u8; 32] = rng.random();
        let k = ChaChaKey::new(key, make_nonce(rng.random(), rng.random()));
        let mut ledger = NonceLedger::new();
        let frame = ledger.encrypt(&k, &msg).map_err(|e| e.to_string())?;
        let parsed = chacha::CipherFrame::from_bytes(&frame.to_bytes()).map_err(|e| e.to_string())?;
        ensure(chacha::decrypt(&k, &parsed).map_err(|e| e.to_string())? == msg, || format!("chacha case {case}"))?;
        ensure(ledger.encrypt(&k, &msg) == Err(Error::NonceReuse), || "nonce reuse accepted".into())?;
    }
    let mut short = KeyMaterial::from_bytes(&[0u8; 4]);
    let exhausted = otp_encrypt(&[0u8; 5], &mut short);
    ensure(matches!(exhausted, Err(Error::KeyExhausted { .. })), || "key exhaustion not raised".into())?;
    ensure(short.consumed() == 0, || "failed encryption consumed key".into())?;
    Ok("1000 OTP + 1000 ChaCha roundtrips; nonce reuse and key exhaustion rejected".into())
}

fn upd(values: Vec<f64>, n: usize, id: u32) -> LocalUpdate {
    let f = values.len() - 1;
    LocalUpdate {
        weights: ModelWeights::from_values(1, f, values).unwrap(),
        n_samples: n,
        robot_id: id,
        session_index: 1,
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn fedavg_suite() -> Check {
    let tol = 1e-12;
    let one = upd(vec![0.3, -2.0, 7.5], 11, 4);
    ensure(max_diff(&fedavg(std::slice::from_ref(&one)).unwrap().values, &one.weights.values) <= tol, || {
        "identity".into()
    })?;
    let mean = fedavg(&[upd(vec![1.0, 5.0], 3, 1), upd(vec![3.0, -1.0], 3, 2)]).unwrap();
    ensure(max_diff(&mean.values, &[2.0, 2.0]) <= tol, || "equal-weight mean".into())?;
    let w = fedavg(&[upd(vec![0.0, 0.0], 1, 1), upd(vec![4.0, 4.0], 3, 2)]).unwrap();
    ensure(max_diff(&w.values, &[3.0, 3.0]) <= tol, || format!("(1,3)/(0,4) gave {:?}", w.values))?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let k = rng.random_range(1..9);
        let ups: Vec<LocalUpdate> = (0..k)
            .map(|i| upd((0..6).map(|_| rng.random_range(-5.0..5.0)).collect(), rng.random_range(1..400), i + 1))
            .collect();
        let base = fedavg(&ups).unwrap();
        let mut perm = ups.clone();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        ensure(max_diff(&fedavg(&perm).unwrap().values, &base.values) <= tol, || "permutation".into())?;
        let same: Vec<LocalUpdate> = ups
            .iter()
            .map(|u| LocalUpdate {
                weights: base.clone(),
                ..u.clone()
            })
            .collect();
        ensure(max_diff(&fedavg(&same).unwrap().values, &base.values) <= tol, || "idempotence".into())?;
    }
    Ok("identity, mean, (1,3)/(0,4) -> 3, permutation, idempotence exact to 1e-12".into())
}

fn gradient_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let w = random_weights(5, 7, 1.0, &mut rng);
        let rows = random_rows(rng.random_range(1..64), 5, 7, &mut rng);
        let (_, grad) = loss_and_gradient(&w, &rows);
        let mut num = Vec::with_capacity(w.len());
        for i in 0..w.len() {
            let (mut p, mut m) = (w.clone(), w.clone());
            p.values[i] += h;
            m.values[i] -= h;
            num.push((loss_and_gradient(&p, &rows).0 - loss_and_gradient(&m, &rows).0) / (2.0 * h));
        }
        let diff = grad.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = grad.iter().map(|a| a * a).sum::<f64>().sqrt() + num.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(diff / scale.max(1e-12));
    }
    ensure(worst < 1e-4, || format!("relative error {worst:e}"))?;

    let w = random_weights(5, 7, 0.5, &mut rng);
    let data = Dataset::new(random_rows(100, 5, 7, &mut rng));
    let (_, grad) = loss_and_gradient(&w, &data.rows);
    let params = TrainParams {
        learning_rate: 0.1,
        epochs: 1,
        batch_size: 0,
    };
    let out = local_train(&w, &data, &params, 1, 1, &mut rng).map_err(|e| e.to_string())?;
    let expected: Vec<f64> = w.values.iter().zip(&grad).map(|(a, g)| a - 0.1 * g).collect();
    let d = max_diff(&out.weights.values, &expected);
    ensure(d <= 1e-12, || format!("single step off by {d:e}"))?;
    Ok(format!("worst relative error {worst:.2e}; one full-batch step within {d:.1e}"))
}

fn coverage_properties() -> Check {
    ensure(num_strips(10.0, 3.0) == Ok(4), || "(10,3) strips".into())?;
    ensure(total_distance(4, 10.0, 3.0) == Ok(49.0), || "D(4,10,3)".into())?;
    let d = geo_distance(GeoPoint::new(0.0, 0.0).unwrap(), GeoPoint::new(1.0, 0.0).unwrap());
    ensure((d - 111_194.927).abs() <= 0.001, || format!("1 degree = {d}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..20 {
        let width: f64 = rng.random_range(2.0..50.0);
        let length: f64 = rng.random_range(2.0..50.0);
        let w = rng.random_range(0.5..width.min(6.0));
        let plan = plan_in_frame(width, length, w, Orientation::Vertical, None).map_err(|e| e.to_string())?;
        let gap = worst_grid_gap(width, length, 0.25, &plan.waypoints);
        ensure(gap <= w / 2.0 + 1e-9, || format!("box {case}: gap {gap} > {}", w / 2.0))?;
    }
    Ok(format!("worked examples hold, 20 random boxes covered, 1 degree = {d:.4} m"))
}

fn metric_oracle(run: &SimulationReport) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for set in 0..25 {
        let n = rng.random_range(5..25);
        let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0.0..1.0f64) * 8.0).floor() / 8.0).collect();
        let mut pos: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        pos[0] = true;
        pos[1] = false;
        let (a, b) = (binary_roc_auc(&scores, &pos).unwrap(), pair_auc(&scores, &pos).unwrap());
        ensure((a - b).abs() < 1e-9, || format!("set {set}: {a} vs {b}"))?;
    }
    let mut calls = 0;
    for _ in 0..200 {
        let w = random_weights(5, 7, 2.0, &mut rng);
        let test = Dataset::new(random_rows(rng.random_range(1..60), 5, 7, &mut rng));
        let (acc, rec) = match evaluate(&w, &test) {
            Ok(m) => (m.accuracy, m.recall),
            Err(Error::RocAucUndefined(m)) => (m.accuracy, m.recall),
            Err(e) => return Err(e.to_string()),
        };
        ensure(acc == rec, || format!("recall {rec} != accuracy {acc}"))?;
        calls += 1;
    }
    for r in run.rounds.iter().flat_map(|r| &r.plant_metrics) {
        ensure(r.recall == r.accuracy, || format!("plant {} session {}", r.plant_id, r.session))?;
        calls += 1;
    }
    Ok(format!("25 AUC sets match the pair oracle; recall = accuracy on {calls} evaluations"))
}

fn table_trend(run: &SimulationReport, elapsed: Duration) -> Check {
    let mut summary = Vec::new();
    for plant in [1, 2] {
        let rows = run.metrics_for(plant);
        let first = rows.first().ok_or("no rows")?;
        let last = rows.iter().find(|r| r.session == 30).ok_or("no session 30")?;
        let auc = last.roc_auc.unwrap_or(0.0);
        ensure(first.accuracy <= 0.65, || format!("plant {plant} session 1 accuracy {:.4}", first.accuracy))?;
        ensure(last.accuracy >= 0.80, || format!("plant {plant} session 30 accuracy {:.4}", last.accuracy))?;
        ensure(last.accuracy - first.accuracy >= 0.15, || format!("plant {plant} gain too small"))?;
        ensure(auc >= 0.95, || format!("plant {plant} session 30 AUC {auc:.4}"))?;
        summary.push(format!("P{plant} {:.3} -> {:.3} (AUC {auc:.3})", first.accuracy, last.accuracy));
    }
    ensure(elapsed < Duration::from_secs(300), || format!("run took {elapsed:?}"))?;
    Ok(format!("{} in {:.1}s", summary.join(", "), elapsed.as_secs_f64()))
}

fn output_files(run: &SimulationReport) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    emit_report(run, dir.path()).map_err(|e| e.to_string())?;
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir.path()).map_err(|e| e.to_string())? {
        let p = entry.map_err(|e| e.to_string())?.path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        if name.starts_with("metrics_plant") || name.starts_with("events_plant") {
            out.insert(name, std::fs::read(&p).map_err(|e| e.to_string())?);
        }
    }
    Ok(out)
}

fn determinism(run: &SimulationReport) -> Check {
    let again = run_simulation(&SimConfig::default()).map_err(|e| e.to_string())?;
    let (a, b) = (output_files(run)?, output_files(&again)?);
    ensure(a.len() == 4 && a == b, || "repeat run differs".into())?;
    let mut cfg = SimConfig::default();
    cfg.seed += 1;
    let other = output_files(&run_simulation(&cfg).map_err(|e| e.to_string())?)?;
    let readings = |files: &BTreeMap<String, Vec<u8>>| -> Vec<String> {
        String::from_utf8_lossy(&files["events_plant1.log"])
            .lines()
            .filter(|l| l.contains(",ReadingTaken,"))
            .map(str::to_owned)
            .collect()
    };
    ensure(readings(&a) != readings(&other), || "seed change left readings unchanged".into())?;
    Ok(format!("{} files byte-identical across runs; new seed changes readings", a.len()))
}

fn security_path(clean: &SimulationReport) -> Check {
    let mut cfg = SimConfig::default();
    cfg.qkd.eve_fraction = 1.0;
    let tapped = run_simulation(&cfg).map_err(|e| e.to_string())?;
    let (aborted, total) = tapped.gate_counts();
    let rate = aborted as f64 / total as f64;
    ensure(rate >= 0.95, || format!("only {aborted}/{total} aborted"))?;

    let uploads: Vec<_> = clean.rounds.iter().flat_map(|r| &r.uploads).collect();
    ensure(uploads.iter().all(|u| u.delivered), || "clean run dropped an upload".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for i in 0..20 {
        let update = LocalUpdate {
            weights: random_weights(5, 7, 3.0, &mut rng),
            n_samples: 10,
            robot_id: i,
            session_index: 1,
        };
        let cfg = QkdConfig {
            channel_flip_prob: 0.0,
            ..QkdConfig::default()
        };
        let out = global_exchange(&update, &cfg, &mut rng).map_err(|e| e.to_string())?;
        let got = out.delivered().ok_or("clean exchange dropped")?;
        let same = got.values.iter().zip(&update.weights.values).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same && out.attempts()[0].decision == GateDecision::Accept, || "payload altered".into())?;
    }
    Ok(format!(
        "eve=1: {aborted}/{total} attempts aborted ({:.1}%); eve=0: {}/{} uploads delivered bit-exact",
        rate * 100.0,
        uploads.len(),
        uploads.len()
    ))
}

fn main() -> ExitCode {
    let started = Instant::now();
    let default_run = run_simulation(&SimConfig::default());
    let run_time = started.elapsed();

    let mut results: Vec<(&str, Check)> = vec![
        ("ChaCha20 RFC 8439 vectors", rfc_vectors()),
        ("BB84 statistics", bb84_statistics()),
        ("OTP and ChaCha roundtrips", roundtrips()),
        ("FedAvg suite", fedavg_suite()),
        ("Gradient check", gradient_check()),
        ("Coverage properties", coverage_properties()),
    ];
    match &default_run {
        Ok(run) => {
            results.push(("Metric oracle", metric_oracle(run)));
            results.push(("Accuracy trend over 30 sessions", table_trend(run, run_time)));
            results.push(("Determinism", determinism(run)));
            results.push(("End-to-end security path", security_path(run)));
        }
        Err(e) => {
            for name in ["Metric oracle", "Accuracy trend over 30 sessions", "Determinism", "End-to-end security path"] {
                results.push((name, Err(format!("default run failed: {e}"))));
            }
        }
    }

    let mut failed = 0;
    for (i, (name, res)) in results.iter().enumerate() {
        match res {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
