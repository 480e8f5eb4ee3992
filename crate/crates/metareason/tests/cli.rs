use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::thread;

use metareason::cli::{execute_bench, execute_run, Mode, RunManifest, TaskSpec};
use metareason::files::SnapshotFile;
use metareason_core::bench::Policy;
use serde_json::Value;

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metareason"))
        .args(args)
        .env_remove("METAREASON_API_KEY")
        .env_remove("METAREASON_BASE_URL")
        .output()
        .unwrap()
}

fn no_env(_: &str) -> Option<String> {
    None
}

fn lines(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn manifest(tasks: TaskSpec, out: PathBuf, seed: u64) -> RunManifest {
    RunManifest {
        config_path: None,
        tasks,
        output_dir: out,
        seed,
        mode: Mode::Mock,
    }
}

#[test]
fn mock_scenario_run_writes_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = bin(&[
        "run",
        "--tasks",
        repo("scenarios/dominant.toml").to_str().unwrap(),
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trace.jsonl", "metrics.csv", "snapshot.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }

    let records = lines(&out.join("trace.jsonl"));
    assert_eq!(records[0]["record"], "header");
    assert_eq!(records[0]["schema_version"], 1);
    assert_eq!(records[0]["seed"], 3);
    assert_eq!(records.last().unwrap()["record"], "catalog");
    let updates = records
        .iter()
        .filter(|r| r["record"] == "event" && r["event"] == "update")
        .count() as u64;
    let mut expected = 0;
    let mut steps = 0;
    for t in records.iter().filter(|r| r["record"] == "task") {
        let t = &t["trace"];
        let n = t["steps"].as_array().unwrap().len() as u64;
        steps += n;
        expected += n - 1 - t["skipped_evaluations"].as_u64().unwrap();
        assert_eq!(t["bandit_updates"].as_u64().unwrap(), n - 1 - t["skipped_evaluations"].as_u64().unwrap());
    }
    assert_eq!(updates, expected);

    let snap = SnapshotFile::read(&out.join("snapshot.json")).unwrap();
    let pulls: u64 = snap.bandit.arms.iter().map(|a| a.pull_count).sum();
    assert_eq!(pulls, expected);
    assert_eq!(snap.bandit.round, expected);

    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count() as u64, steps + 1);
    assert!(metrics.starts_with("round,task_id,arm_id,reward,cumulative_reward,"));

    let o = bin(&["snapshot", "restore-check", out.join("snapshot.json").to_str().unwrap()]);
    assert!(o.status.success());
    let o = bin(&["snapshot", "inspect", out.join("snapshot.json").to_str().unwrap()]);
    assert!(o.status.success());
    let table = String::from_utf8(o.stdout).unwrap();
    assert_eq!(table.lines().count(), 2 + snap.bandit.arms.len());
}

#[test]
fn fresh_snapshot_inspects_with_zero_pulls_and_corruption_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    fs::write(&config, "[mock.generator]\ndefault_reply = \"\\\\boxed{42}\"\n").unwrap();
    let out = dir.path().join("run");
    let o = bin(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--task",
        "What is six times seven?",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("task-0\tsolved\t1 rounds\t42"));

    let path = out.join("snapshot.json");
    let o = bin(&["snapshot", "inspect", path.to_str().unwrap()]);
    assert!(o.status.success());
    let table = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = table.lines().skip(2).collect();
    let snap = SnapshotFile::read(&path).unwrap();
    assert_eq!(rows.len(), snap.bandit.arms.len());
    assert!(!rows.is_empty());
    for row in rows {
        let cols: Vec<&str> = row.split_whitespace().collect();
        assert_eq!(cols[1], "seed");
        assert_eq!(cols[2], "0");
        assert_eq!(cols[3], "-");
    }

    let text = fs::read_to_string(&path).unwrap();
    let at = text.find("\"reward_sum\": ").unwrap() + "\"reward_sum\": ".len();
    let mut bytes = text.into_bytes();
    bytes[at] = if bytes[at] == b'1' { b'2' } else { b'1' };
    fs::write(&path, bytes).unwrap();
    assert_eq!(bin(&["snapshot", "restore-check", path.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(bin(&["snapshot", "inspect", path.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn existing_output_directory_is_not_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let first = execute_run(&manifest(TaskSpec::Inline("t".into()), out.clone(), 0), &no_env).unwrap();
    assert_eq!(first.output_dir, out);
    let before = fs::read(out.join("trace.jsonl")).unwrap();
    let second = execute_run(&manifest(TaskSpec::Inline("t".into()), out.clone(), 0), &no_env).unwrap();
    assert_ne!(second.output_dir, out);
    assert!(second.output_dir.starts_with(&out));
    assert_eq!(fs::read(out.join("trace.jsonl")).unwrap(), before);
    assert!(second.output_dir.join("trace.jsonl").is_file());
}

#[test]
fn identical_seeds_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = TaskSpec::File(repo("scenarios/two_context.toml"));
    let a = execute_run(&manifest(tasks.clone(), dir.path().join("a"), 5), &no_env).unwrap();
    let b = execute_run(&manifest(tasks.clone(), dir.path().join("b"), 5), &no_env).unwrap();
    let c = execute_run(&manifest(tasks, dir.path().join("c"), 6), &no_env).unwrap();
    for f in ["trace.jsonl", "metrics.csv", "snapshot.json"] {
        let read = |o: &metareason::cli::RunOutcome| fs::read(o.output_dir.join(f)).unwrap();
        assert_eq!(read(&a), read(&b), "{f}");
        assert_ne!(read(&a), read(&c), "{f}");
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = bin(&["run", "--task", "x", "--mode", "live", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("METAREASON_API_KEY"));
    assert!(!out.exists());

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[bandit]\nc = -1.0\n").unwrap();
    let o = bin(&["run", "--config", bad.to_str().unwrap(), "--task", "x", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let puzzles = dir.path().join("p.csv");
    fs::write(&puzzles, "a,b,c,d,solvable\n1,1,1,1,true\n").unwrap();
    let o = bin(&["run", "--tasks", puzzles.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = bin(&["run", "--tasks", "/nonexistent/p.csv", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = bin(&["run", "--tasks", repo("scenarios/dominant.toml").to_str().unwrap(), "--mode", "live", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    assert_eq!(bin(&["run", "--out", out.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
    assert!(!out.exists());
}

#[test]
fn bench_compares_policies_and_writes_csvs() {
    let env = repo("configs/bench_env.toml");
    let total = |p: &str| -> f64 {
        let o = execute_bench(&env, p, 2000, 3, 0, None, Mode::Mock, None, &no_env).unwrap();
        o.runs.iter().map(|r| r.total()).sum::<f64>() / 3.0
    };
    let (linucb, random) = (total("linucb"), total("random"));
    assert!(linucb > random, "{linucb} vs {random}");

    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["bench", "--env", env.to_str().unwrap(), "--policy", "linucb", "--rounds", "0", "--out", dir.path().join("z").to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(dir.path().join("z/bench.csv")).unwrap().lines().count(), 1);
    assert_eq!(fs::read_to_string(dir.path().join("z/bench_aggregate.csv")).unwrap(), "round,mean_cumulative_reward\n");

    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = bin(&["bench", "--env", env.to_str().unwrap(), "--policy", "linucb", "--rounds", "300", "--seeds", "2", "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
        (fs::read(out.join("bench.csv")).unwrap(), fs::read(out.join("bench_aggregate.csv")).unwrap())
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a.0).unwrap().lines().count(), 601);

    let o = bin(&["bench", "--env", env.to_str().unwrap(), "--policy", "thompson"]);
    assert_eq!(o.status.code(), Some(2));
    for p in ["oracle", "random", "direct"] {
        assert!(p.parse::<Policy>().is_ok(), "{p}");
        let o = bin(&["bench", "--env", env.to_str().unwrap(), "--policy", p, "--rounds", "50", "--seeds", "1"]);
        assert!(o.status.success(), "{p}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn puzzles_subcommand_writes_a_loadable_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    let o = bin(&["puzzles", "--split", "test", "--count", "5", "--seed", "2", "--out", path.to_str().unwrap()]);
    assert!(o.status.success());
    let text = fs::read_to_string(&path).unwrap();
    let puzzles = metareason::tasks::read_puzzles(&text).unwrap();
    assert_eq!(puzzles.len(), 5);

    let out = dir.path().join("run");
    let run = execute_run(&manifest(TaskSpec::File(path), out, 0), &no_env).unwrap();
    assert_eq!(run.traces.len(), 5);
    assert!(run.traces[0].task_id.starts_with("g24-0-"));
}

/// A stand-in OpenAI-compatible server: chat calls get `chat_status` and a
/// boxed answer, embedding calls a 4-dimensional vector.
fn fake_server(chat_status: u16) -> String {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", server.server_addr().to_ip().unwrap());
    thread::spawn(move || {
        for mut request in server.incoming_requests() {
            let mut sent = String::new();
            let _ = request.as_reader().read_to_string(&mut sent);
            let content = if sent.contains("brief_rationale") {
                r#"{"C_c": 1.0, "C_a": 1.0, "S_p": 1.0, "R_u": 0.0, "R": 0.9, "brief_rationale": "solved"}"#
            } else {
                "(13 - 9) * (10 - 4) = 24 \\boxed{(13 - 9) * (10 - 4)}"
            };
            let (status, body) = if request.url().ends_with("/embeddings") {
                (200, r#"{"model":"e","data":[{"embedding":[0.5,0.5,0.5,0.5]}],"usage":{"prompt_tokens":3}}"#.to_string())
            } else {
                (
                    chat_status,
                    serde_json::json!({
                        "model": "fake",
                        "choices": [{"message": {"content": content}, "finish_reason": "stop"}],
                        "usage": {"prompt_tokens": 10, "completion_tokens": 12}
                    })
                    .to_string(),
                )
            };
            let _ = request.respond(tiny_http::Response::from_string(body).with_status_code(status));
        }
    });
    url
}

fn live_run(chat_status: u16) -> (Output, PathBuf, tempfile::TempDir) {
    let url = fake_server(chat_status);
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    fs::write(&config, "[orchestrator]\nverify_answers = true\n[backends]\nembedding_dim = 4\nmax_retries = 1\nbackoff_ms = 1\n").unwrap();
    let puzzles = dir.path().join("p.csv");
    fs::write(&puzzles, "a,b,c,d,solvable\n4,9,10,13,true\n").unwrap();
    let out = dir.path().join("run");
    let o = Command::new(env!("CARGO_BIN_EXE_metareason"))
        .args(["run", "--mode", "live", "--config", config.to_str().unwrap(), "--tasks", puzzles.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .env("METAREASON_API_KEY", "test-key")
        .env("METAREASON_BASE_URL", &url)
        .output()
        .unwrap();
    (o, out, dir)
}

#[test]
fn live_mode_talks_to_an_openai_compatible_endpoint() {
    let (o, out, _dir) = live_run(200);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let records = lines(&out.join("trace.jsonl"));
    assert_eq!(records[0]["mode"], "live");
    let task = records.iter().find(|r| r["record"] == "task").unwrap();
    assert_eq!(task["trace"]["status"], "solved");
    assert_eq!(task["trace"]["final_answer"], "(13 - 9) * (10 - 4)");
    assert_eq!(task["trace"]["totals"]["calls"], 2);
    assert_eq!(task["trace"]["totals"]["completion_tokens"], 24);
    assert_eq!(task["trace"]["skipped_evaluations"], 0);
    assert_eq!(task["trace"]["steps"][0]["reward"]["profile"], "composite");
}

#[test]
fn backend_failure_exits_with_one() {
    let (o, out, _dir) = live_run(401);
    assert_eq!(o.status.code(), Some(1));
    let records = lines(&out.join("trace.jsonl"));
    let task = records.iter().find(|r| r["record"] == "task").unwrap();
    assert_eq!(task["trace"]["status"], "failed");
}
