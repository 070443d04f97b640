use crate::error::{Error, Result};
use crate::nn::{predictions, Model};
use crate::tensor::Tensor;

/// Labeled images in `[0, 1]`, stored flat so that an empty set is representable.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pixels: Vec<f32>,
    image_shape: [usize; 3],
    labels: Vec<usize>,
    classes: usize,
    /// Free-form identifier such as `mnist-train`.
    pub split: String,
}

impl Dataset {
    pub fn new(
        pixels: Vec<f32>,
        image_shape: [usize; 3],
        labels: Vec<usize>,
        classes: usize,
        split: impl Into<String>,
    ) -> Result<Self> {
        let per: usize = image_shape.iter().product();
        if per == 0 {
            return Err(Error::invalid(format!("image shape {image_shape:?} has a zero dimension")));
        }
        if pixels.len() != per * labels.len() {
            return Err(Error::CountMismatch {
                images: pixels.len() / per,
                labels: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            pixels,
            image_shape,
            labels,
            classes,
            split: split.into(),
        })
    }

    /// Builds a dataset from a `[B, C, H, W]` batch.
    pub fn from_tensor(images: &Tensor<f32>, labels: Vec<usize>, classes: usize, split: impl Into<String>) -> Result<Self> {
        let [_, c, h, w] = images.shape() else {
            return Err(Error::InvalidShape {
                shape: images.shape().to_vec(),
                reason: "expected [B, C, H, W]".into(),
            });
        };
        Self::new(images.data().to_vec(), [*c, *h, *w], labels, classes, split)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.image_shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    fn per_image(&self) -> usize {
        self.image_shape.iter().product()
    }

    /// `[C, H, W]` image at `index`.
    pub fn image(&self, index: usize) -> Tensor<f32> {
        let n = self.per_image();
        Tensor::new(self.image_shape.to_vec(), self.pixels[index * n..(index + 1) * n].to_vec())
            .expect("shape validated at construction")
    }

    /// `[B, C, H, W]` tensor of images `start..end`.
    pub fn batch(&self, start: usize, end: usize) -> Result<Tensor<f32>> {
        if start >= end || end > self.len() {
            return Err(Error::Empty(format!("batch {start}..{end} of a {}-image dataset", self.len())));
        }
        let n = self.per_image();
        let [c, h, w] = self.image_shape;
        Tensor::new(vec![end - start, c, h, w], self.pixels[start * n..end * n].to_vec())
    }

    /// All images as one `[B, C, H, W]` tensor.
    pub fn images(&self) -> Result<Tensor<f32>> {
        self.batch(0, self.len())
    }

    /// Subset in the given index order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let n = self.per_image();
        let mut pixels = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            pixels.extend_from_slice(&self.pixels[i * n..(i + 1) * n]);
        }
        Dataset {
            pixels,
            image_shape: self.image_shape,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            split: self.split.clone(),
        }
    }

    /// First `count` images (or all of them).
    pub fn take(&self, count: usize) -> Dataset {
        let idx: Vec<usize> = (0..count.min(self.len())).collect();
        self.select(&idx)
    }
}

/// Subset classified correctly by every model, in the original order.
pub fn filter_correct(data: &Dataset, models: &[&Model<f32>]) -> Result<Dataset> {
    if models.is_empty() {
        return Err(Error::invalid("filter_correct needs at least one model"));
    }
    let mut keep = vec![true; data.len()];
    for model in models {
        for ((k, p), l) in keep.iter_mut().zip(predictions(model, data)?).zip(data.labels()) {
            *k &= p == *l;
        }
    }
    let idx: Vec<usize> = (0..data.len()).filter(|&i| keep[i]).collect();
    if idx.is_empty() {
        return Err(Error::Empty(format!(
            "no image out of {} is classified correctly by all {} models; supply more images",
            data.len(),
            models.len()
        )));
    }
    Ok(data.select(&idx))
}
