//! Pairing images into training triplets.

use rand::seq::SliceRandom;

use crate::channel::{sample_phase_offset, RngState};
use crate::error::{Error, Result};
use crate::image::ImageBatch;

/// `b` image pairs and the relative phase offset of each pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTriplet {
    pub m_a: ImageBatch,
    pub m_b: ImageBatch,
    pub delta_phi: Vec<f64>,
}

impl TrainingTriplet {
    pub fn new(m_a: ImageBatch, m_b: ImageBatch, delta_phi: Vec<f64>) -> Result<Self> {
        m_a.ensure_same_shape(&m_b)?;
        if delta_phi.len() != m_a.batch() {
            return Err(Error::Dimension {
                what: "phase offsets per triplet",
                expected: m_a.batch(),
                got: delta_phi.len(),
            });
        }
        if let Some(bad) = delta_phi.iter().find(|p| !(0.0..std::f64::consts::TAU).contains(*p)) {
            return Err(Error::Domain(format!("phase offset {bad} outside [0, 2π)")));
        }
        Ok(Self { m_a, m_b, delta_phi })
    }

    pub fn len(&self) -> usize {
        self.m_a.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// How the relative phase offset of each training pair is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OffsetSampling {
    Uniform,
    /// Every pair uses this offset (radians).
    Fixed(f64),
}

/// One epoch of triplets. The images are shuffled once; node B's batch is
/// taken half an epoch further along the shuffled order than node A's, so
/// each batch pairs two disjoint sets and every image is sent once by each
/// node per epoch. Incomplete trailing batches are dropped.
pub struct TripletBatches<'a> {
    images: &'a ImageBatch,
    order: Vec<usize>,
    phases: Vec<f64>,
    batch_size: usize,
    next: usize,
}

pub fn make_batches<'a>(
    images: &'a ImageBatch,
    batch_size: usize,
    offsets: OffsetSampling,
    rng: &mut RngState,
) -> Result<TripletBatches<'a>> {
    let n = images.batch();
    if batch_size == 0 || n < 2 * batch_size {
        return Err(Error::Config(format!(
            "batch size {batch_size} needs at least {} images, have {n}",
            2 * batch_size.max(1)
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let batches = n / batch_size;
    let phases = (0..batches * batch_size)
        .map(|_| match offsets {
            OffsetSampling::Uniform => sample_phase_offset(rng),
            OffsetSampling::Fixed(p) => p.rem_euclid(std::f64::consts::TAU),
        })
        .collect();
    Ok(TripletBatches {
        images,
        order,
        phases,
        batch_size,
        next: 0,
    })
}

impl TripletBatches<'_> {
    pub fn num_batches(&self) -> usize {
        self.images.batch() / self.batch_size
    }
}

impl Iterator for TripletBatches<'_> {
    type Item = TrainingTriplet;

    fn next(&mut self) -> Option<TrainingTriplet> {
        if self.next >= self.num_batches() {
            return None;
        }
        let n = self.order.len();
        let start = self.next * self.batch_size;
        let idx_a: Vec<usize> = (start..start + self.batch_size).map(|i| self.order[i]).collect();
        let idx_b: Vec<usize> = (start..start + self.batch_size).map(|i| self.order[(i + n / 2) % n]).collect();
        self.next += 1;
        let phases = self.phases[start..start + self.batch_size].to_vec();
        let m_a = self.images.select(&idx_a).expect("indices in range");
        let m_b = self.images.select(&idx_b).expect("indices in range");
        Some(TrainingTriplet {
            m_a,
            m_b,
            delta_phi: phases,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.num_batches() - self.next.min(self.num_batches());
        (left, Some(left))
    }
}

impl ExactSizeIterator for TripletBatches<'_> {}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn tagged(n: usize) -> ImageBatch {
        // first pixel of image i encodes i
        let mut pixels = vec![0.0f32; n * 4];
        for i in 0..n {
            pixels[i * 4] = i as f32 / n as f32;
        }
        ImageBatch::new(n, 2, 2, 1, pixels).unwrap()
    }

    fn ids(b: &ImageBatch, n: usize) -> Vec<usize> {
        (0..b.batch()).map(|i| (b.image(i)[0] * n as f32).round() as usize).collect()
    }

    #[test]
    fn shapes_and_disjoint_pairs() {
        let n = 1000;
        let images = tagged(n);
        let mut rng = RngState::new(1);
        let batches: Vec<_> = make_batches(&images, 128, OffsetSampling::Uniform, &mut rng).unwrap().collect();
        assert_eq!(batches.len(), 7);
        let mut seen_a = HashSet::new();
        for t in &batches {
            assert_eq!(t.m_a.shape(), (128, 2, 2, 1));
            assert_eq!(t.m_b.shape(), (128, 2, 2, 1));
            assert_eq!(t.delta_phi.len(), 128);
            let a: HashSet<_> = ids(&t.m_a, n).into_iter().collect();
            let b: HashSet<_> = ids(&t.m_b, n).into_iter().collect();
            assert_eq!(a.len(), 128);
            assert!(a.is_disjoint(&b));
            assert!(seen_a.is_disjoint(&a));
            seen_a.extend(a);
        }
    }

    #[test]
    fn offsets_are_uniform() {
        let images = tagged(20_000);
        let mut rng = RngState::new(2);
        let phases: Vec<f64> = make_batches(&images, 100, OffsetSampling::Uniform, &mut rng)
            .unwrap()
            .flat_map(|t| t.delta_phi)
            .collect();
        assert_eq!(phases.len(), 20_000);
        let mut bins = [0usize; 8];
        for p in &phases {
            assert!((0.0..std::f64::consts::TAU).contains(p));
            bins[(p / std::f64::consts::TAU * 8.0) as usize] += 1;
        }
        // chi-square with 7 dof, 0.1% critical value 24.3
        let e = phases.len() as f64 / 8.0;
        let chi2: f64 = bins.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
        assert!(chi2 < 24.3, "chi2 {chi2}");
    }

    #[test]
    fn fixed_seed_reproduces_sequence() {
        let images = tagged(600);
        let run = |seed| -> Vec<TrainingTriplet> {
            make_batches(&images, 50, OffsetSampling::Uniform, &mut RngState::new(seed)).unwrap().collect()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
        let fixed: Vec<_> = make_batches(&images, 50, OffsetSampling::Fixed(0.0), &mut RngState::new(5)).unwrap().collect();
        assert!(fixed.iter().all(|t| t.delta_phi.iter().all(|&p| p == 0.0)));
    }

    #[test]
    fn too_few_images_rejected() {
        let images = tagged(10);
        assert!(make_batches(&images, 6, OffsetSampling::Uniform, &mut RngState::new(0)).is_err());
        assert!(make_batches(&images, 0, OffsetSampling::Uniform, &mut RngState::new(0)).is_err());
    }

    #[test]
    fn triplet_validation() {
        let images = tagged(4);
        assert!(TrainingTriplet::new(images.clone(), images.clone(), vec![0.0; 4]).is_ok());
        assert!(TrainingTriplet::new(images.clone(), images.clone(), vec![0.0; 3]).is_err());
        assert!(TrainingTriplet::new(images.clone(), images.clone(), vec![7.0; 4]).is_err());
    }
}
