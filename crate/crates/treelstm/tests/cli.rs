//! End-to-end checks of the command-line driver and file formats.

use std::process::Command;

use treelstm::corpus::{parse_class_corpus_with, parse_embeddings, Labeling};
use treelstm::formats::{parse_bracketed, serialize_tree};
use treelstm::synth::{synth_task, SynthKind};
use treelstm_core::training::{
    model_select, train, CellKind, EncodingSpec, Hyperparams, ModelConfig,
};
use treelstm_core::transduction::{MaskPolicy, TaskSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_treelstm"))
}

#[test]
fn serialize_parse_roundtrip_on_random_trees() {
    let mut seen = 0;
    for seed in 0..25 {
        for kinds in [SynthKind::KeywordPrune, SynthKind::DepthRelabel] {
            for record in synth_task(kinds, 20, seed).records {
                let text = serialize_tree(&record.input);
                let reparsed = parse_bracketed(&text, usize::MAX).unwrap();
                assert_eq!(reparsed, record.input);
                assert_eq!(serialize_tree(&reparsed), text);
                seen += 1;
            }
        }
    }
    assert_eq!(seen, 1000);
}

#[test]
fn synth_command_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("a.tsv");
    let out2 = dir.path().join("b.tsv");
    for out in [&out1, &out2] {
        let status = bin()
            .args(["synth", "--kind", "keyword_prune", "--size", "100", "--seed", "9", "--out"])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read(&out1).unwrap();
    assert_eq!(a, std::fs::read(&out2).unwrap());
    assert_eq!(a.iter().filter(|&&b| b == b'\n').count(), 100);
}

#[test]
fn eval_rejects_mismatched_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.tsv");
    std::fs::write(&corpus, synth_task(SynthKind::ClassByRootArity, 50, 3).to_text()).unwrap();
    let status = bin()
        .args(["train", "--task", "supersource", "--cell", "childsum", "--hidden", "8"])
        .args(["--runs", "1", "--epochs", "2", "--train"])
        .arg(&corpus)
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    // different hidden size: parameter shapes cannot match
    let output = bin()
        .args(["eval", "--task", "supersource", "--cell", "childsum", "--hidden", "12"])
        .args(["--runs", "1", "--test"])
        .arg(&corpus)
        .arg("--checkpoint")
        .arg(dir.path().join("checkpoint.txt"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("checkpoint does not match"), "stderr: {stderr}");
}

#[test]
fn missing_flags_exit_with_usage_error() {
    let output = bin().args(["train", "--cell", "td"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn grid_prefers_the_size_that_solves_the_task() {
    // counting depth saturates a single hidden unit well before five levels
    let text = synth_task(SynthKind::DepthRelabel, 140, 17).to_text();
    let mut samples = treelstm::corpus::parse_parallel_corpus(&text, usize::MAX, false)
        .unwrap()
        .samples;
    let val = samples.split_off(120);
    let config = ModelConfig {
        task: TaskSpec::Relabel { classes: 6, mask: MaskPolicy::AllNodes },
        cell: CellKind::TopDown,
        hidden: 1,
        encoding: EncodingSpec::OneHot { alphabet: 8 },
        arity: 3,
    };
    let hp = Hyperparams { epochs: 25, patience: 25, seed: 0, ..Default::default() };
    let (winner, report) = model_select(&config, &samples, &val, &[1, 8], &hp).unwrap();
    assert_eq!(winner, 8, "report: {report:?}");
}

#[test]
fn dense_embedding_corpus_trains() {
    let table = parse_embeddings("the 1 0 0\ncat 0 1 0\nsat 0 0 1\n").unwrap();
    let text = "0\t(the cat)\n1\t(sat (the cat) sat)\n0\t(cat the)\n1\t(sat sat)\n";
    let corpus = parse_class_corpus_with(text, usize::MAX, Labeling::Embedded(&table)).unwrap();
    let config = ModelConfig {
        task: TaskSpec::Supersource { classes: 2 },
        cell: CellKind::ChildSum,
        hidden: 4,
        encoding: EncodingSpec::Dense { dim: 3 },
        arity: 3,
    };
    let mut model = config.build(0);
    let hp = Hyperparams { epochs: 3, patience: 3, ..Default::default() };
    let result = train(&mut model, &corpus.samples, &corpus.samples, &hp).unwrap();
    assert_eq!(result.history.len(), 3);
}
