use feddp::dataset::{categorize_clients, CsvSchema, Manifest, ProjectDataset};
use feddp::synth;

const PROMISE_CODES: [(&str, &str); 23] = [
    ("ant-1.6", "MM"),
    ("ant-1.7", "HM"),
    ("jedit-4.0", "MM"),
    ("jedit-4.1", "MM"),
    ("lucene-2.2", "MH"),
    ("lucene-2.4", "MH"),
    ("xerces-1.2", "ML"),
    ("xerces-1.3", "ML"),
    ("velocity-1.5", "MH"),
    ("velocity-1.6", "MH"),
    ("xalan-2.5", "HH"),
    ("xalan-2.6", "HH"),
    ("synapse-1.1", "MM"),
    ("synapse-1.2", "MH"),
    ("log4j-1.0", "LM"),
    ("log4j-1.1", "LH"),
    ("poi-2.5", "MH"),
    ("poi-3.0", "MH"),
    ("ivy-1.4", "ML"),
    ("ivy-2.0", "ML"),
    ("prop6", "HL"),
    ("redaktor", "LL"),
    ("tomcat", "HL"),
];

const SOFTLAB_CODES: [(&str, &str); 4] = [("ar3", "ML"), ("ar4", "MM"), ("ar5", "LM"), ("ar6", "ML")];

fn through_files(data: &[ProjectDataset<f64>], schema: &CsvSchema) -> Vec<ProjectDataset<f64>> {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth::write_corpus(data, schema, dir.path()).unwrap();
    Manifest::load(&manifest).unwrap().load_datasets(schema).unwrap()
}

fn check(data: Vec<ProjectDataset<f64>>, distillation: &str, expected: &[(&str, &str)]) {
    let clients: Vec<_> = data.into_iter().filter(|d| d.project() != distillation).collect();
    assert_eq!(clients.len(), expected.len());
    let got = categorize_clients(&clients);
    for (name, code) in expected {
        assert_eq!(got[*name].code(), *code, "{name}");
    }
}

#[test]
fn promise_client_categories() {
    let data = through_files(&synth::promise_corpus(3), &CsvSchema::promise());
    check(data, "camel", &PROMISE_CODES);
}

#[test]
fn softlab_client_categories() {
    let data = through_files(&synth::softlab_corpus(3), &CsvSchema::softlab());
    check(data, "ar1", &SOFTLAB_CODES);
}
