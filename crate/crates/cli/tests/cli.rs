use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use click2mask::backends::TargetLayout;
use click2mask::latent::ImageBuffer;

const BIN: &str = env!("CARGO_BIN_EXE_click2mask");

fn save(path: &Path, img: &ImageBuffer) {
    let bytes: Vec<u8> = img.data().iter().map(|&v| (v * 255.0 + 0.5).floor() as u8).collect();
    image::save_buffer(path, &bytes, img.width() as u32, img.height() as u32, image::ExtendedColorType::Rgb8).unwrap();
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("C2M_SEED").output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

struct Fixture {
    dir: tempfile::TempDir,
    image: PathBuf,
    point: String,
    config: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let layout = TargetLayout::generate("a red ball", (96, 96), 0);
    let image = dir.path().join("scene.png");
    save(&image, &layout.render_background());
    let config = dir.path().join("config.json");
    fs::write(&config, r#"{"evolutions": 2, "seeds_per_batch": 2}"#).unwrap();
    Fixture {
        point: format!("{},{}", layout.blob_center.0 as usize, layout.blob_center.1 as usize),
        dir,
        image,
        config,
    }
}

fn edit_args<'a>(f: &'a Fixture, out: &'a str, extra: &[&'a str]) -> Vec<String> {
    let mut args: Vec<String> = vec![
        "edit".into(),
        "--image".into(),
        f.image.to_string_lossy().into(),
        "--point".into(),
        f.point.clone(),
        "--prompt".into(),
        "a red ball".into(),
        "--config".into(),
        f.config.to_string_lossy().into(),
        "--out".into(),
        f.dir.path().join(out).to_string_lossy().into(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

fn run_owned(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    run(&refs)
}

#[test]
fn missing_prompt_is_a_usage_error() {
    let f = fixture();
    let out = run(&["edit", "--image", f.image.to_str().unwrap(), "--point", "1,1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("--prompt"));
    assert!(text(&out.stderr).contains("Usage"));
}

#[test]
fn point_outside_the_image() {
    let f = fixture();
    let out = run(&["edit", "--image", f.image.to_str().unwrap(), "--point", "96,10", "--prompt", "x"]);
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("x must be < 96"), "{err}");
}

#[test]
fn unreadable_image_is_io() {
    let out = run(&["edit", "--image", "/nonexistent.png", "--point", "1,1", "--prompt", "x"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bad_config_and_backend() {
    let f = fixture();
    fs::write(&f.config, r#"{"learning_rate": 1}"#).unwrap();
    assert_eq!(run_owned(&edit_args(&f, "o.png", &[])).status.code(), Some(2));
    fs::write(&f.config, "{}").unwrap();
    let out = run_owned(&edit_args(&f, "o.png", &["--backend", "sdxl"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn edit_writes_outputs_and_traces() {
    let f = fixture();
    let trace = f.dir.path().join("trace");
    let args = edit_args(&f, "out.png", &["--seed", "3", "--trace-dir", trace.to_str().unwrap(), "--frames"]);
    let out = run_owned(&args);
    assert!(out.status.success(), "{}", text(&out.stderr));

    let img = image::open(f.dir.path().join("out.png")).unwrap();
    assert_eq!((img.width(), img.height()), (96, 96));

    let scores: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(f.dir.path().join("out.scores.json")).unwrap()).unwrap();
    assert_eq!(scores["master_seed"], 3);
    assert_eq!(scores["evolutions"].as_array().unwrap().len(), 2);

    let keys = ["t", "progress", "tau", "area", "score", "rerun", "stopped"];
    for i in 0..2 {
        let jsonl = fs::read_to_string(trace.join(format!("evolution_{i}.jsonl"))).unwrap();
        let lines: Vec<&str> = jsonl.lines().collect();
        // One line per executed blended step: 26 without an early stop, fewer with one.
        assert!((16..=26).contains(&lines.len()));
        for (j, line) in lines.iter().enumerate() {
            let rec: serde_json::Value = serde_json::from_str(line).unwrap();
            let obj = rec.as_object().unwrap();
            assert_eq!(obj.len(), keys.len());
            for k in keys {
                assert!(obj.contains_key(k), "{k}");
            }
            assert_eq!(rec["t"], 75 - j);
            assert!(rec["score"].is_null() || rec["score"].is_f64());
        }
        let stopped = lines.last().unwrap().contains("\"stopped\":true");
        if !stopped {
            assert_eq!(lines.len(), 26);
        }

        let frames = fs::read_dir(trace.join(format!("evolution_{i}"))).unwrap().count();
        assert_eq!(frames, lines.len() + 1);
        let frame = image::open(trace.join(format!("evolution_{i}/frame_075.png"))).unwrap();
        assert_eq!((frame.width(), frame.height()), (96, 96));
    }
}

#[test]
fn seed_env_overrides_flag() {
    let f = fixture();
    let a = edit_args(&f, "a.png", &["--seed", "2"]);
    assert!(run_owned(&a).status.success());
    let b = edit_args(&f, "b.png", &["--seed", "1"]);
    let refs: Vec<&str> = b.iter().map(String::as_str).collect();
    let out = Command::new(BIN).args(&refs).env("C2M_SEED", "2").output().unwrap();
    assert!(out.status.success());
    assert_eq!(
        fs::read(f.dir.path().join("a.png")).unwrap(),
        fs::read(f.dir.path().join("b.png")).unwrap()
    );
    let c = edit_args(&f, "c.png", &[]);
    let refs: Vec<&str> = c.iter().map(String::as_str).collect();
    let out = Command::new(BIN).args(&refs).env("C2M_SEED", "two").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn extract_mask_paths() {
    let dir = tempfile::tempdir().unwrap();
    let layout = TargetLayout::generate("a lamp", (80, 64), 0);
    let (a, b, small) = (dir.path().join("a.png"), dir.path().join("b.png"), dir.path().join("s.png"));
    save(&a, &layout.render_background());
    save(&b, &layout.render());
    save(&small, &ImageBuffer::filled(8, 8, [0.5; 3]).unwrap());
    let s = |p: &PathBuf| p.to_str().unwrap().to_owned();

    let mask = dir.path().join("same.png");
    let out = run(&["extract-mask", "--input", &s(&a), "--output", &s(&a), "--mask-out", &s(&mask)]);
    assert!(out.status.success());
    assert_eq!(text(&out.stdout).trim(), "0");
    assert!(image::open(&mask).unwrap().to_luma8().pixels().all(|p| p.0[0] == 0));

    let out = run(&["extract-mask", "--input", &s(&a), "--output", &s(&b)]);
    assert!(out.status.success());
    let area: f64 = text(&out.stdout).trim().parse().unwrap();
    assert!(area > 0.02, "{area}");
    let mask = image::open(dir.path().join("b.mask.png")).unwrap().to_luma8();
    assert!(mask.pixels().any(|p| p.0[0] == 255));

    let out = run(&["extract-mask", "--input", &s(&a), "--output", &s(&small)]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["extract-mask", "--input", "/missing.png", "--output", &s(&a)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn stats_reports() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p.to_str().unwrap().to_owned()
    };

    let ties = write("ties.csv", "item_id,rater_id,choice\n1,r1,tie\n1,r2,tie\n2,r1,tie\n");
    let out = run(&["stats", "--votes", &ties]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["report"]["B"]["pct_tied_items"], 100.0);
    assert_eq!(json["report"]["A"]["items_method_a"], 0);

    let hand = write("hand.csv", "1,r1,a\n1,r2,a\n1,r3,a\n2,r1,b\n2,r2,b\n2,r3,a\n3,r1,tie\n3,r2,tie\n3,r3,a\n");
    let json: serde_json::Value = serde_json::from_slice(&run(&["stats", "--votes", &hand]).stdout).unwrap();
    assert_eq!(json["report"]["items"], 3);
    assert_eq!(json["report"]["B"]["tied_items"], 1);
    assert_eq!(json["report"]["B"]["pct_method_a"], 50.0);
    assert_eq!(json["report"]["A"]["items_method_a"], 2);
    assert_eq!(json["report"]["C"]["votes_method_a"], 5);
    assert_eq!(json["report"]["C"]["votes_tie"], 2);
    assert!(json["significance"]["votes"]["p_value"].is_f64());

    let empty = write("empty.csv", "");
    assert_eq!(run(&["stats", "--votes", &empty]).status.code(), Some(2));
    let bad = write("bad.csv", "1,r1,a\n2,r1,sideways\n");
    let out = run(&["stats", "--votes", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("line 2"));
    assert_eq!(run(&["stats", "--votes", "/missing.csv"]).status.code(), Some(3));
}
