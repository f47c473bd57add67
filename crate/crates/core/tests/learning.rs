use efpc_core::align::{mix_datasets, LabeledExample};
use efpc_core::encoder::{build_vocab, mean_loss, token_accuracy, train, LossVariant, ModelConfig, TrainConfig};
use efpc_core::eval::{data_efficiency_sweep, evaluate_labeled};
use efpc_core::synth::{stopword_corpus, task_awareness_corpus};
use efpc_core::Model32;

fn small(seed: u64) -> ModelConfig {
    ModelConfig { embed_dim: 16, num_layers: 2, num_heads: 2, ffn_dim: 32, max_seq_len: 16, seed, ..Default::default() }
}

fn cfg(variant: LossVariant, epochs: usize) -> TrainConfig {
    TrainConfig { learning_rate: 3e-3, epochs, loss_variant: variant, ..Default::default() }
}

fn fresh(data: &[&[LabeledExample]], seed: u64) -> Model32 {
    let all: Vec<LabeledExample> = data.iter().flat_map(|d| d.iter().cloned()).collect();
    Model32::new(small(seed), build_vocab(&all).unwrap()).unwrap()
}

#[test]
fn learns_the_stopword_rule() {
    let train_set = stopword_corpus(200, 4, 12, 5);
    let held_out = stopword_corpus(100, 4, 12, 6);
    let m = fresh(&[&train_set, &held_out], 1);
    let (m, report) = train(&m, &train_set, &cfg(LossVariant::Agnostic, 20)).unwrap();
    assert!(report.epochs.len() <= 50);
    let acc = token_accuracy(&m, &held_out, false).unwrap();
    assert!(acc >= 0.95, "held-out accuracy {acc}");
}

#[test]
fn incremental_training_reduces_loss_on_new_data() {
    let base_set = stopword_corpus(50, 4, 12, 7);
    let extra = stopword_corpus(10, 4, 12, 8);
    let m = fresh(&[&base_set, &extra], 2);
    let (base, _) = train(&m, &base_set, &cfg(LossVariant::Agnostic, 3)).unwrap();
    let before = mean_loss(&base, &extra, LossVariant::Agnostic).unwrap();
    let (tuned, _) = train(&base, &extra, &cfg(LossVariant::Agnostic, 1)).unwrap();
    let after = mean_loss(&tuned, &extra, LossVariant::Agnostic).unwrap();
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn training_is_deterministic() {
    let data = stopword_corpus(30, 4, 8, 9);
    let m = fresh(&[&data], 3);
    let (a, ra) = train(&m, &data, &cfg(LossVariant::Mask, 2)).unwrap();
    let (b, rb) = train(&m, &data, &cfg(LossVariant::Mask, 2)).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}

#[test]
fn instruction_matters_only_with_the_instruction() {
    let train_set = task_awareness_corpus(300, 12, 1);
    let held_out = task_awareness_corpus(200, 12, 2);
    let m = fresh(&[&train_set, &held_out], 3);
    let (aware, _) = train(&m, &train_set, &cfg(LossVariant::Mask, 20)).unwrap();
    let (blind, _) = train(&m, &train_set, &cfg(LossVariant::Agnostic, 20)).unwrap();
    let aware_acc = token_accuracy(&aware, &held_out, true).unwrap();
    let blind_acc = token_accuracy(&blind, &held_out, false).unwrap();
    assert!(aware_acc >= 0.9, "aware {aware_acc}");
    assert!(blind_acc <= 0.7, "blind {blind_acc}");
}

#[test]
fn joint_mixture_trains() {
    let aware = task_awareness_corpus(40, 12, 20);
    let agnostic: Vec<_> = task_awareness_corpus(40, 12, 21).iter().map(|e| e.without_instruction()).collect();
    let mix = mix_datasets(&aware, &agnostic, 0.5, 40, 0).unwrap();
    assert_eq!(mix.iter().filter(|e| e.boundary_m > 0).count(), 20);
    let m = fresh(&[&aware, &agnostic], 4);
    let (_, report) = train(&m, &mix, &cfg(LossVariant::Mask, 1)).unwrap();
    assert_eq!(report.examples, 40);
}

#[test]
fn sweep_zero_cell_is_the_base_model() {
    let base_set: Vec<_> = task_awareness_corpus(40, 12, 10).iter().map(|e| e.without_instruction()).collect();
    let extra = task_awareness_corpus(40, 12, 11);
    let eval_set = task_awareness_corpus(40, 12, 12);
    let m = fresh(&[&base_set, &extra, &eval_set], 3);
    let (base, _) = train(&m, &base_set, &cfg(LossVariant::Agnostic, 2)).unwrap();
    let c = cfg(LossVariant::Mask, 2);
    let a = data_efficiency_sweep(&base, &extra, &[0.0, 0.5], &eval_set, &c).unwrap();
    let b = data_efficiency_sweep(&base, &extra, &[0.0, 0.5], &eval_set, &c).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.cells[0].report, evaluate_labeled(&base, &eval_set, true).unwrap());
    assert_eq!(a.cells[1].n_train, 20);
}
