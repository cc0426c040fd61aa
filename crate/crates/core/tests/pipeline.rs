//! End-to-end: generate a corpus, export it, score external predictions.

use std::fs::File;
use std::io::BufWriter;

use ctprior::dataset::{from_json_line, generate_corpus, to_json_line, CorpusReader};
use ctprior::eval::{
    evaluate, predict_corpus, query_records, score_predictions_file, write_predictions, OraclePredictor, Prediction,
    VarPredictor,
};
use ctprior::prior::PriorConfig;

#[test]
fn oracle_predictions_file_reproduces_oracle_report() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = dir.path().join("c.ctpr");
    generate_corpus(&PriorConfig::default(), 31, 200, 4, &corpus_path).unwrap();
    let corpus = CorpusReader::open(&corpus_path).unwrap();

    let oracle = OraclePredictor { cfg: corpus.config().unwrap() };
    let means = predict_corpus(&corpus, &oracle).unwrap();
    let records = query_records(&corpus).unwrap();
    let direct = evaluate("oracle", &records, &means).unwrap();

    let preds: Vec<Prediction> = means.iter().map(|&mean| Prediction { mean, std: 1.0 }).collect();
    let pred_path = dir.path().join("oracle.csv");
    let mut out = BufWriter::new(File::create(&pred_path).unwrap());
    write_predictions(&preds, &mut out).unwrap();
    drop(out);

    let scored = score_predictions_file(&corpus, &pred_path).unwrap();
    assert_eq!(scored.overall, direct.overall);
    assert_eq!(scored.by_class, direct.by_class);
    assert_eq!(scored.overall.rmse, Some(0.0));
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    assert!((scored.nll.unwrap() - half_log_2pi).abs() < 1e-12);
}

#[test]
fn jsonl_export_round_trips_whole_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ctpr");
    generate_corpus(&PriorConfig::ood(), 9, 50, 2, &path).unwrap();
    let corpus = CorpusReader::open(&path).unwrap();
    for s in corpus.iter() {
        let s = s.unwrap();
        assert_eq!(from_json_line(&to_json_line(&s)).unwrap(), s);
    }
}

#[test]
fn var_predictions_are_finite_on_default_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ctpr");
    generate_corpus(&PriorConfig::default(), 3, 300, 4, &path).unwrap();
    let corpus = CorpusReader::open(&path).unwrap();
    let preds = predict_corpus(&corpus, &VarPredictor::default()).unwrap();
    assert!(preds.iter().all(|p| p.is_finite()));
}

#[test]
fn empty_corpus_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ctpr");
    assert!(generate_corpus(&PriorConfig::default(), 0, 0, 1, &path).is_err());
    assert!(!path.exists());
}
