mod common;

use proptest::prelude::*;

use common::{toy, SeparableTask};
use iclmu::backend::{
    extend_vocabulary, forward_loss, greedy_decode_ids, score_options, InitStrategy, Seq2SeqBackend, SoftTokenBank,
};
use iclmu::markup::{
    build_option_block, define_default_tagset, phrase_set, Demonstration, PhraseDomain, RenderedPrompt, Renderer,
    TemplateSpec,
};
use iclmu::seed;
use iclmu::warmup::{train, Optimizer, TrainingInstance, WarmupConfig};

fn soft_prompt(backend: &dyn Seq2SeqBackend, demos: usize, option_seed: u64, sample_seed: u64) -> RenderedPrompt {
    let tags = define_default_tagset(9).unwrap();
    let task = SeparableTask::default();
    let mut rng = seed::rng(sample_seed);
    let demos: Vec<Demonstration> = (0..demos)
        .map(|i| Demonstration::new(task.sentence(&mut rng, i % 3), task.classes[i % 3].0))
        .collect();
    let options = build_option_block(&task.descriptors(), true, option_seed).unwrap();
    let query = task.sentence(&mut rng, 1);
    Renderer::new(&tags, backend.tokenizer())
        .render(&TemplateSpec::default_soft(), &options, &demos, &query, &task.labels())
        .unwrap()
}

fn bank(backend: &dyn Seq2SeqBackend, seed: u64) -> SoftTokenBank {
    extend_vocabulary(backend, &define_default_tagset(9).unwrap(), InitStrategy::Random, seed, None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn rendering_is_deterministic_and_counts_soft_tokens(demos in 0usize..6, option_seed: u64, sample_seed: u64) {
        let backend = toy();
        let a = soft_prompt(&backend, demos, option_seed, sample_seed);
        prop_assert_eq!(&a, &soft_prompt(&backend, demos, option_seed, sample_seed));
        prop_assert_eq!(a.soft_count(), 9 + 2 + 3 * demos + 2);
    }

    #[test]
    fn option_scores_are_a_distribution(demos in 0usize..4, option_seed: u64, bank_seed in 0u64..4) {
        let backend = toy();
        let bank = bank(&backend, bank_seed);
        let prompt = soft_prompt(&backend, demos, option_seed, 1);
        let letters = prompt.option_block.letters();
        let score = score_options(&backend, &bank, &prompt, &letters).unwrap();
        let total: f64 = score.per_letter.values().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let reversed: Vec<char> = letters.iter().rev().copied().collect();
        let again = score_options(&backend, &bank, &prompt, &reversed).unwrap();
        for l in &letters {
            prop_assert!((score.get(*l).unwrap() - again.get(*l).unwrap()).abs() < 1e-15);
        }
        let first = greedy_decode_ids(&backend, &bank, &prompt, 1).unwrap();
        if let Some(&id) = first.first() {
            let tok = backend.tokenizer();
            if let Some(l) = letters.iter().find(|l| tok.single_token(&l.to_string()).unwrap() == id) {
                prop_assert_eq!(score.best(), Some(*l));
            }
        }
    }
}

#[test]
fn anneal_copies_phrase_token_embeddings() {
    let backend = toy();
    let tags = define_default_tagset(9).unwrap();
    let phrases = phrase_set(1, PhraseDomain::Intent).unwrap().tag_phrases();
    let bank = extend_vocabulary(&backend, &tags, InitStrategy::Anneal, 0, Some(&phrases)).unwrap();
    for (tag, range) in tags.offsets() {
        let ids = backend.tokenizer().encode(&phrases[&tag]);
        for (i, row) in range.enumerate() {
            assert_eq!(bank.rows().row(row), backend.token_embedding(ids[i % ids.len()]), "tag {tag} row {i}");
        }
    }
}

#[test]
fn base_model_is_untouched_by_gradients() {
    let backend = toy();
    let before = backend.compute_digest();
    let bank = bank(&backend, 0);
    let prompt = soft_prompt(&backend, 2, 0, 0);
    let letter = prompt.option_block.letters()[0];
    let inst = TrainingInstance::new(&backend, prompt.with_target(letter), true).unwrap();
    let (loss, grad) = forward_loss(&backend, &bank, &inst.prompt, &inst.target).unwrap();
    assert!(loss.is_finite());
    assert_eq!(grad.dim(), bank.rows().dim());
    assert!(grad.iter().any(|g| *g != 0.0));
    assert_eq!(backend.compute_digest(), before);
    assert_eq!(backend.param_digest(), before);
}

#[test]
fn prompts_without_soft_tokens_get_zero_gradients() {
    let backend = toy();
    let bank = bank(&backend, 0);
    let task = SeparableTask::default();
    let template = phrase_set(2, PhraseDomain::Intent).unwrap().template();
    let options = task.options();
    let prompt = Renderer::without_tags(backend.tokenizer())
        .render(&template, &options, &[Demonstration::new("rain wind", "weather")], "goal team", &task.labels())
        .unwrap();
    assert_eq!(prompt.soft_count(), 0);
    let letter = options.letter_of("sport").unwrap();
    let inst = TrainingInstance::new(&backend, prompt.with_target(letter), true).unwrap();
    let (_, grad) = forward_loss(&backend, &bank, &inst.prompt, &inst.target).unwrap();
    assert!(grad.iter().all(|g| *g == 0.0));
}

#[test]
fn repeated_batches_reduce_loss() {
    let backend = toy();
    let config = WarmupConfig {
        steps: 30,
        batch_size: 2,
        include_nota: false,
        optimizer: Optimizer::adam(),
        ..WarmupConfig::default()
    };
    let prompt = soft_prompt(&backend, 1, 0, 4);
    let letter = prompt.option_block.letters()[1];
    let inst = TrainingInstance::new(&backend, prompt.with_target(letter), true).unwrap();
    let stream = std::iter::repeat_with(|| Ok(inst.clone()));
    let out = train(&backend, bank(&backend, 1), stream, &config).unwrap();
    assert!(out.losses.last().unwrap() < &out.losses[0], "{:?}", out.losses);
}
