use std::fs;
use std::path::PathBuf;

use musegnn_core::binio::LabeledMatrix;
use musegnn_core::coexpression::parse_edges_tsv;
use musegnn_core::data::mtx::parse_mtx;
use musegnn_core::data::{parse_coords_tsv, parse_manifest, parse_names};
use musegnn_core::metrics::EmbeddingTable;
use musegnn_core::model::Model;
use musegnn_core::pipeline::{read_anchors, PipelineConfig};

fn seeds(target: &str) -> Vec<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<PathBuf> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    assert!(!files.is_empty(), "no seeds for {target}");
    files
}

fn text(p: &PathBuf) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn corpus_seeds_are_valid_inputs() {
    for p in seeds("mtx") {
        parse_mtx(&text(&p)).unwrap();
    }
    for p in seeds("manifest") {
        parse_manifest(&text(&p)).unwrap();
    }
    for p in seeds("names") {
        parse_names(&text(&p), "genes").unwrap();
    }
    for p in seeds("coords") {
        parse_coords_tsv(&text(&p)).unwrap();
    }
    for p in seeds("edges_tsv") {
        parse_edges_tsv(&text(&p)).unwrap();
    }
    for p in seeds("labeled_matrix") {
        LabeledMatrix::decode(&fs::read(&p).unwrap()).unwrap();
    }
    for p in seeds("model_bytes") {
        Model::from_bytes(&fs::read(&p).unwrap()).unwrap();
    }
    for p in seeds("embedding_csv") {
        EmbeddingTable::parse_csv(&text(&p)).unwrap();
    }
    for p in seeds("anchors_json") {
        read_anchors(&p).unwrap();
    }
    PipelineConfig::from_json(&text(&seeds("pipeline_config")[1])).unwrap();
}
