use crate::datasynth::Sample;
use crate::error::{Error, Result};
use crate::model::TextBatch;
use crate::numerics::Tensor;
use crate::scalar::Scalar;
use crate::textbridge::Vocabulary;

/// One sample ready for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem<T> {
    pub id: u32,
    pub label: usize,
    pub pixels: Vec<T>,
    pub vlm: Vec<usize>,
    pub llm: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSet<T> {
    pub canvas: usize,
    pub classes: usize,
    pub items: Vec<TrainItem<T>>,
}

impl<T: Scalar> TrainSet<T> {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>, vocab: &Vocabulary, classes: usize) -> Result<Self> {
        let mut items = Vec::new();
        let mut canvas = None;
        for s in samples {
            if s.image.width != s.image.height || canvas.is_some_and(|c| c != s.image.width) {
                return Err(Error::Dataset(format!("sample {} has a {}x{} image", s.id, s.image.width, s.image.height)));
            }
            canvas = Some(s.image.width);
            let ids = |t: &str| vocab.tokenize(t).ids.into_iter().map(|i| i as usize).collect();
            items.push(TrainItem {
                id: s.id,
                label: s.label,
                pixels: s.image.pixels.iter().map(|&p| T::c(p as f64 / 255.0)).collect(),
                vlm: ids(&s.vlm_text),
                llm: ids(&s.llm_text),
            });
        }
        Ok(TrainSet {
            canvas: canvas.ok_or_else(|| Error::Dataset("no samples".into()))?,
            classes,
            items,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn images(&self, idx: &[usize]) -> Tensor<T> {
        let mut data = Vec::with_capacity(idx.len() * self.canvas * self.canvas);
        for &i in idx {
            data.extend_from_slice(&self.items[i].pixels);
        }
        Tensor::new(vec![idx.len(), 1, self.canvas, self.canvas], data).expect("pixel count")
    }

    pub fn text(&self, idx: &[usize]) -> TextBatch {
        let mut t = TextBatch::default();
        for &i in idx {
            t.vlm.extend_from_slice(&self.items[i].vlm);
            t.llm.extend_from_slice(&self.items[i].llm);
        }
        t
    }

    pub fn targets(&self, idx: &[usize]) -> Tensor<T> {
        let mut t = Tensor::zeros(&[idx.len(), self.classes]);
        for (r, &i) in idx.iter().enumerate() {
            t.data_mut()[r * self.classes + self.items[i].label] = T::one();
        }
        t
    }

    pub fn position(&self, id: u32) -> Option<usize> {
        self.items.iter().position(|it| it.id == id)
    }
}
