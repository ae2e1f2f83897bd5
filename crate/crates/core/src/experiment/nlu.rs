//! Domain classifier, intent classifier and slot tagger trained side by side
//! and evaluated as one NLU system.

use rayon::prelude::*;

use crate::dataset::{Dataset, Field};
use crate::evalmetrics::{Annotation, PredictionSet};
use crate::trainer::{init_model, train, Model, ModelConfig, Task, TrainSchedule};
use crate::{Error, Result};

pub struct NluStack {
    pub domain: Model<f32>,
    pub domain_names: Vec<String>,
    pub intent: Model<f32>,
    pub intent_names: Vec<String>,
    pub tagger: Model<f32>,
    pub slot_names: Vec<String>,
}

fn classifier(d: &Dataset, base: &ModelConfig, s: &TrainSchedule) -> Result<Model<f32>> {
    let cfg = ModelConfig {
        num_classes: d.num_classes,
        task: Task::SequenceClassification,
        ..base.clone()
    };
    Ok(train(init_model(&cfg)?, d, s, None)?.model)
}

/// `base` supplies vocabulary, sizes and seed; output sizes come from `d`.
pub fn train_stack(d: &Dataset, base: &ModelConfig, s: &TrainSchedule) -> Result<NluStack> {
    if d.examples.iter().any(|e| e.domain.is_none() || e.intent.is_none() || e.slots.is_none()) {
        return Err(Error::invalid("NLU training needs domain, intent and slot annotations"));
    }
    let by_domain = d.relabel_by(Field::Domain)?;
    let by_intent = d.relabel_by(Field::Intent)?;
    let tag_cfg = ModelConfig {
        num_classes: d.slot_names.len(),
        task: Task::TokenTagging,
        ..base.clone()
    };
    Ok(NluStack {
        domain: classifier(&by_domain, base, s)?,
        domain_names: by_domain.class_names.clone(),
        intent: classifier(&by_intent, base, s)?,
        intent_names: by_intent.class_names.clone(),
        tagger: train(init_model(&tag_cfg)?, d, s, None)?.model,
        slot_names: d.slot_names.clone(),
    })
}

/// Gold and predicted domain, intent and slots for every example of `d`.
pub fn evaluate_stack(stack: &NluStack, d: &Dataset) -> Result<PredictionSet> {
    let rows: Vec<(Annotation, Annotation)> = d
        .examples
        .par_iter()
        .map(|e| {
            let dom = stack.domain.predict(&e.tokens)?[0];
            let int = stack.intent.predict(&e.tokens)?[0];
            let tags = stack.tagger.predict(&e.tokens)?;
            Ok((
                Annotation {
                    class: None,
                    domain: e.domain.clone(),
                    intent: e.intent.clone(),
                    slots: e.slots.clone(),
                },
                Annotation {
                    class: None,
                    domain: Some(stack.domain_names[dom].clone()),
                    intent: Some(stack.intent_names[int].clone()),
                    slots: Some(tags.iter().map(|&t| stack.slot_names[t].clone()).collect()),
                },
            ))
        })
        .collect::<Result<_>>()?;
    let mut set = PredictionSet::default();
    for (e, (g, p)) in d.examples.iter().zip(rows) {
        set.push(e.id, g, p);
    }
    Ok(set)
}
