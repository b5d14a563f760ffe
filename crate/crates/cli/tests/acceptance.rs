//! End-to-end acceptance run: one PASS/FAIL/SKIP line per criterion. The
//! learned-detector criteria drive the `polyglot` binary exactly as a user
//! would (dataset build, train, eval) and read its report file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use num_rational::BigRational;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use polyglot_core::corpus::{candidates, Dataset, Role};
use polyglot_core::eval::{pr_auc, shift_robustness, stack_cases, tools};
use polyglot_core::features::{featurize, ngram_vocab};
use polyglot_core::forge::{combination_matrix, forge, verify_polyglot, Recipe};
use polyglot_core::linear::{check_linear_gradients, LinearModel};
use polyglot_core::neural::gradcheck::check_gradients;
use polyglot_core::neural::{self, targets, ConvNetConfig, ConvNetParams, Head};
use polyglot_core::{identify_first, sanitize_image, verdict, verify_clean, verify_holdout, DatasetConfig, FormatId, Verdict};

const SEED: &str = "0";
const PROBE_SEED: u64 = 0x0acc;

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Line {
    id: u32,
    name: &'static str,
    status: Status,
    detail: String,
}

fn judge(id: u32, name: &'static str, ok: bool, detail: String) -> Line {
    Line { id, name, status: if ok { Status::Pass } else { Status::Fail }, detail }
}

fn cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_polyglot"))
        .args(args)
        .output()
        .map_err(|e| format!("spawn failed: {e}"))?;
    if !out.status.success() {
        return Err(format!("`polyglot {}` exited {:?}: {}", args.join(" "), out.status.code(), String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// One full CLI run: build, train both heads, evaluate.
struct Run {
    data: PathBuf,
    binary: PathBuf,
    multi: PathBuf,
    reports: PathBuf,
    build_and_train_binary_secs: f64,
}

fn pipeline(root: &Path, extra: &[&str]) -> Result<Run, String> {
    let run = Run {
        data: root.join("data"),
        binary: root.join("binary.pgc"),
        multi: root.join("multi.pgc"),
        reports: root.join("eval"),
        build_and_train_binary_secs: 0.0,
    };
    let call = |args: &[&str]| {
        let v: Vec<&str> = ["--seed", SEED].iter().chain(extra).chain(args).copied().collect();
        cli(&v)
    };
    let t = Instant::now();
    call(&["dataset", "build", "-o", p(&run.data)])?;
    call(&["train", "--model", "conv", "--head", "binary", "--data", p(&run.data), "-o", p(&run.binary)])?;
    let build_and_train_binary_secs = t.elapsed().as_secs_f64();
    call(&["train", "--model", "conv", "--head", "multilabel", "--data", p(&run.data), "-o", p(&run.multi)])?;
    let mut eval = vec!["eval", "--data", p(&run.data), "--conv-binary", p(&run.binary), "--conv-multi", p(&run.multi)];
    eval.extend(["--scanner", "--tools", "--out", p(&run.reports)]);
    call(&eval)?;
    Ok(Run { build_and_train_binary_secs, ..run })
}

fn reports(run: &Run) -> Result<BTreeMap<String, Value>, String> {
    let text = std::fs::read_to_string(run.reports.join("reports.jsonl")).map_err(|e| e.to_string())?;
    text.lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).map_err(|e| e.to_string())?;
            Ok((v["detector"].as_str().unwrap_or_default().to_string(), v))
        })
        .collect()
}

fn c1_generator() -> Line {
    let t = Instant::now();
    let config = DatasetConfig::default();
    let per_pair = 20;
    let mut pools = BTreeMap::new();
    let (mut made, mut verified, mut errors) = (0, 0, Vec::new());
    for combo in combination_matrix() {
        for f in [combo.covert, combo.overt] {
            if let std::collections::btree_map::Entry::Vacant(slot) = pools.entry(f) {
                match candidates(f, 2 * per_pair, &config, PROBE_SEED) {
                    Ok(d) => {
                        slot.insert(d);
                    }
                    Err(e) => return judge(1, "generator validity", false, format!("donors for {f}: {e}")),
                }
            }
        }
        for i in 0..per_pair {
            let method = combo.methods[i % combo.methods.len()];
            let covert = &pools[&combo.covert][i];
            let overt = &pools[&combo.overt][(i * 7 + 3) % (2 * per_pair)];
            match forge(Recipe::new(combo.covert, combo.overt, method, i as u64), &covert.bytes, &overt.bytes) {
                Ok(r) => {
                    made += 1;
                    verified += verify_polyglot(&r) as usize;
                }
                Err(e) => errors.push(format!("{}+{} {method}: {e}", combo.covert, combo.overt)),
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pairs = combination_matrix().len();
    let ok = pairs == 30 && made >= 600 && verified == made && errors.is_empty() && secs < 60.0;
    let first_err = errors.first().map(|e| format!("; first error: {e}")).unwrap_or_default();
    judge(1, "generator validity", ok, format!("{verified}/{made} verified over {pairs} pairs in {secs:.2}s (need all, >= 600, < 60s){first_err}"))
}

fn c2_identification(run: &Result<Run, String>) -> Line {
    let config = DatasetConfig::default();
    let (mut right, mut total) = (0, 0);
    for f in FormatId::KNOWN {
        match candidates(f, 100, &config, PROBE_SEED ^ 1) {
            Ok(donors) => {
                total += donors.len();
                right += donors.iter().filter(|d| identify_first(&d.bytes) == f).count();
            }
            Err(e) => return judge(2, "identification", false, format!("donors for {f}: {e}")),
        }
    }
    let labels = run.as_ref().map_err(Clone::clone).and_then(|r| {
        let ds = Dataset::load(&r.data).map_err(|e| e.to_string())?;
        let bad = ds.verify_labels().map_err(|e| e.to_string())?;
        Ok((ds.manifest.samples.len(), bad.len()))
    });
    match labels {
        Ok((n, bad)) => judge(
            2,
            "identification",
            right == total && bad == 0,
            format!("identify_first {right}/{total} monoglots; label recovery {}/{n} manifest records exact", n - bad),
        ),
        Err(e) => judge(2, "identification", false, e),
    }
}

fn conv_report(run: &Result<Run, String>) -> Result<(Value, f64), String> {
    let r = run.as_ref().map_err(Clone::clone)?;
    let ds = Dataset::load(&r.data).map_err(|e| e.to_string())?;
    if !verify_holdout(&ds.manifest).passed() {
        return Err("donor holdout check failed".into());
    }
    let conv = reports(r)?.remove("conv").ok_or("no conv report")?;
    Ok((conv, r.build_and_train_binary_secs))
}

fn c3_binary(run: &Result<Run, String>) -> Line {
    match conv_report(run) {
        Ok((v, secs)) => {
            let (f1, auc) = (v["f1"].as_f64().unwrap_or(0.0), v["pr_auc"].as_f64().unwrap_or(0.0));
            let ok = f1 >= 0.95 && auc >= 0.99 && secs <= 1800.0;
            judge(3, "conv detector, binary", ok, format!("F1 {f1:.4} (>= 0.95), PR-AUC {auc:.4} (>= 0.99), build+train {secs:.0}s (<= 1800s)"))
        }
        Err(e) => judge(3, "conv detector, binary", false, e),
    }
}

fn c4_multilabel(run: &Result<Run, String>) -> Line {
    match conv_report(run) {
        Ok((v, _)) => {
            let f1 = v["multilabel_exact_f1"].as_f64().unwrap_or(0.0);
            judge(4, "conv detector, multi-label", f1 >= 0.90, format!("exact-set F1 {f1:.4} (>= 0.90)"))
        }
        Err(e) => judge(4, "conv detector, multi-label", false, e),
    }
}

fn c5_comparison(run: &Result<Run, String>) -> Line {
    if !tools::probe("file") {
        return Line { id: 5, name: "comparison shape", status: Status::Skip, detail: "`file` is not installed".into() };
    }
    let all = match run.as_ref().map_err(Clone::clone).and_then(reports) {
        Ok(a) => a,
        Err(e) => return judge(5, "comparison shape", false, e),
    };
    let f1 = |d: &str| all.get(d).and_then(|v| v["f1"].as_f64());
    match (f1("conv"), f1("file"), all.get("file").and_then(|v| v["status"].as_str())) {
        (Some(c), Some(f), Some("OK")) => judge(5, "comparison shape", c > f, format!("conv F1 {c:.4} > file F1 {f:.4}")),
        _ => judge(5, "comparison shape", false, "missing conv or file report".into()),
    }
}

fn c6_gradients() -> Line {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
    for head in [Head::Binary, Head::Multilabel] {
        let config = ConvNetConfig::tiny(head);
        let params = ConvNetParams::<f64>::init(&config, PROBE_SEED).expect("tiny config is valid");
        let batch: Vec<(Vec<u16>, Vec<f64>)> = (0..4)
            .map(|i| {
                let bytes: Vec<u8> = (0..rng.gen_range(20..90)).map(|_| rng.gen()).collect();
                let labels = if i % 2 == 0 { [FormatId::Gif].into() } else { [FormatId::Gif, FormatId::Php].into() };
                (config.encode(&bytes), targets(head, &labels))
            })
            .collect();
        for c in check_gradients(&params, &batch, 1e-3, 100, PROBE_SEED) {
            if c.checked < 100 {
                return judge(6, "gradient correctness", false, format!("{}: only {} coordinates checkable", c.name, c.checked));
            }
            worst = worst.max(c.max_rel_error);
        }
    }
    let donors: Vec<Vec<u8>> = [FormatId::Png, FormatId::Php, FormatId::Zip]
        .iter()
        .flat_map(|&f| candidates(f, 4, &DatasetConfig::default(), PROBE_SEED).unwrap_or_default())
        .map(|d| d.bytes)
        .collect();
    let spec = match ngram_vocab(&donors, 200, true) {
        Ok(s) => s,
        Err(e) => return judge(6, "gradient correctness", false, e.to_string()),
    };
    let mut model = LinearModel::<f64>::zeros(spec.clone(), Head::Multilabel);
    model.weights.iter_mut().chain(model.bias.iter_mut()).for_each(|w| *w = rng.gen_range(-0.05..0.05));
    let batch: Vec<(Vec<f64>, Vec<f64>)> = donors
        .iter()
        .map(|b| (featurize::<f64>(b, &spec).to_vec(), targets(Head::Multilabel, &[identify_first(b)].into())))
        .collect();
    let linear = check_linear_gradients(&model, &batch, 1e-3, 1e-4, 50, PROBE_SEED);
    judge(
        6,
        "gradient correctness",
        worst < 1e-4 && linear < 1e-6,
        format!("conv max rel err {worst:.2e} (< 1e-4, eps 1e-3, 100 coords/tensor); linear {linear:.2e} (< 1e-6)"),
    )
}

fn brute_force_ap(scores: &[f64], labels: &[bool]) -> BigRational {
    let int = |n: usize| BigRational::from_integer(n.into());
    let positives = labels.iter().filter(|&&l| l).count();
    let mut total = BigRational::zero();
    for i in (0..labels.len()).filter(|&i| labels[i]) {
        let above: Vec<usize> = (0..scores.len()).filter(|&j| scores[j] >= scores[i]).collect();
        total += int(above.iter().filter(|&&j| labels[j]).count()) / int(above.len());
    }
    total / int(positives)
}

fn c7_pr_auc() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
    let (mut agree, mut n) = (0, 0);
    while n < 1000 {
        let len = rng.gen_range(1..=20);
        let levels = rng.gen_range(1..=8);
        let scores: Vec<f64> = (0..len).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.5)).collect();
        if !labels.contains(&true) {
            continue;
        }
        n += 1;
        agree += pr_auc::<BigRational>(&scores, &labels).is_ok_and(|c| c.auc == brute_force_ap(&scores, &labels)) as usize;
    }
    judge(7, "PR-AUC oracle equivalence", agree == n, format!("{agree}/{n} random instances equal in exact arithmetic"))
}

fn image_overt_polyglots(ds: &Dataset) -> Result<Vec<Vec<u8>>, String> {
    ds.manifest
        .samples
        .iter()
        .filter(|s| s.origin.is_some_and(|o| o.overt.is_image()))
        .map(|s| ds.read(s).map_err(|e| e.to_string()))
        .collect()
}

fn c8_sanitizer(run: &Result<Run, String>) -> Line {
    let files = match run.as_ref().map_err(Clone::clone).and_then(|r| image_overt_polyglots(&Dataset::load(&r.data).map_err(|e| e.to_string())?)) {
        Ok(f) => f,
        Err(e) => return judge(8, "sanitizer", false, e),
    };
    let (mut clean, mut idempotent) = (0, 0);
    for f in &files {
        if let Ok(s) = sanitize_image(f) {
            clean += verify_clean(f, &s).passed() as usize;
            idempotent += (sanitize_image(&s).as_ref() == Ok(&s)) as usize;
        }
    }
    let n = files.len();
    judge(8, "sanitizer", n > 0 && clean == n && idempotent == n, format!("verify_clean {clean}/{n}, idempotent {idempotent}/{n} image-overt polyglots"))
}

fn c9_scanner(run: &Result<Run, String>) -> Line {
    let mut false_alarms = 0;
    let mut monoglots = 0;
    for f in FormatId::IMAGES {
        for d in candidates(f, 100, &DatasetConfig::default(), PROBE_SEED ^ 2).unwrap_or_default() {
            monoglots += 1;
            false_alarms += (verdict(&d.bytes).verdict == Verdict::Suspect) as usize;
        }
    }
    let files = match run.as_ref().map_err(Clone::clone).and_then(|r| image_overt_polyglots(&Dataset::load(&r.data).map_err(|e| e.to_string())?)) {
        Ok(f) => f,
        Err(e) => return judge(9, "scanner", false, e),
    };
    let hits = files.iter().filter(|f| verdict(f).verdict == Verdict::Suspect).count();
    let recall = hits as f64 / files.len().max(1) as f64;
    judge(
        9,
        "scanner",
        monoglots >= 400 && false_alarms == 0 && recall >= 0.95,
        format!("{false_alarms} SUSPECT of {monoglots} monoglot images; recall {recall:.4} ({hits}/{}) on image-overt polyglots (>= 0.95)", files.len()),
    )
}

fn c10_shift(run: &Result<Run, String>) -> Line {
    let result = run.as_ref().map_err(Clone::clone).and_then(|r| {
        let ds = Dataset::load(&r.data).map_err(|e| e.to_string())?;
        let net: ConvNetParams<f32> = neural::load(&std::fs::read(&r.binary).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let mut cases = stack_cases(&ds, Role::Test).map_err(|e| e.to_string())?;
        cases.truncate(100);
        Ok(shift_robustness(&net, &cases, 8))
    });
    match result {
        Ok(s) => judge(
            10,
            "shift robustness",
            s.cases == 100 && s.rate() >= 0.95,
            format!("{}/{} variants unchanged ({:.4}, >= 0.95) over {} TEST stack polyglots, k = 1..8", s.unchanged, s.variants, s.rate(), s.cases),
        ),
        Err(e) => judge(10, "shift robustness", false, e),
    }
}

fn c11_reproducibility(run: &Result<Run, String>, root: &Path) -> Line {
    let first = match run {
        Ok(r) => r,
        Err(e) => return judge(11, "reproducibility", false, e.clone()),
    };
    // A different thread count must not change anything.
    let second = match pipeline(&root.join("rerun"), &["--jobs", "2"]) {
        Ok(r) => r,
        Err(e) => return judge(11, "reproducibility", false, e),
    };
    let same = |a: &Path, b: &Path| std::fs::read(a).ok().is_some_and(|x| Some(x) == std::fs::read(b).ok());
    let checks = [
        ("manifest", same(&first.data.join("manifest.jsonl"), &second.data.join("manifest.jsonl"))),
        ("binary model", same(&first.binary, &second.binary)),
        ("multi-label model", same(&first.multi, &second.multi)),
        ("reports", same(&first.reports.join("reports.jsonl"), &second.reports.join("reports.jsonl"))),
    ];
    let differing: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let detail = if differing.is_empty() {
        "manifest, both model files and reports byte-identical on re-run".to_string()
    } else {
        format!("differs: {}", differing.join(", "))
    };
    judge(11, "reproducibility", differing.is_empty(), detail)
}

fn main() {
    let started = Instant::now();
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    let run = pipeline(&root.join("run"), &[]);
    let lines = vec![
        c1_generator(),
        c2_identification(&run),
        c3_binary(&run),
        c4_multilabel(&run),
        c5_comparison(&run),
        c6_gradients(),
        c7_pr_auc(),
        c8_sanitizer(&run),
        c9_scanner(&run),
        c10_shift(&run),
        c11_reproducibility(&run, root),
    ];
    let mut failed = 0;
    for l in &lines {
        let tag = match l.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Skip => "SKIP",
        };
        println!("{tag} {:>2} {:<28} {}", l.id, l.name, l.detail);
    }
    println!("acceptance: {} criteria, {failed} failed, {:.0}s", lines.len(), started.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
