//! Constraint patterns over token or latent positions.

/// Partition of a sequence into constrained (context) and free positions.
///
/// The same type serves at token level (which characters are fixed) and at
/// latent level (which latent positions are boundary conditions for the ODE).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryMask {
    constrained: Vec<bool>,
}

impl BoundaryMask {
    pub fn new(constrained: Vec<bool>) -> Self {
        BoundaryMask { constrained }
    }

    /// No position constrained.
    pub fn free(len: usize) -> Self {
        BoundaryMask {
            constrained: vec![false; len],
        }
    }

    /// Every position constrained.
    pub fn full(len: usize) -> Self {
        BoundaryMask {
            constrained: vec![true; len],
        }
    }

    /// First `prefix` and last `suffix` positions constrained.
    pub fn infill(len: usize, prefix: usize, suffix: usize) -> Self {
        assert!(prefix + suffix <= len);
        let mut constrained = vec![false; len];
        for c in constrained.iter_mut().take(prefix) {
            *c = true;
        }
        for c in constrained.iter_mut().skip(len - suffix) {
            *c = true;
        }
        BoundaryMask { constrained }
    }

    pub fn len(&self) -> usize {
        self.constrained.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constrained.is_empty()
    }

    pub fn is_constrained(&self, i: usize) -> bool {
        self.constrained[i]
    }

    pub fn constrained_count(&self) -> usize {
        self.constrained.iter().filter(|&&c| c).count()
    }

    pub fn free_count(&self) -> usize {
        self.len() - self.constrained_count()
    }

    pub fn any_constrained(&self) -> bool {
        self.constrained.iter().any(|&c| c)
    }

    pub fn all_constrained(&self) -> bool {
        !self.constrained.is_empty() && self.constrained.iter().all(|&c| c)
    }

    pub fn flags(&self) -> &[bool] {
        &self.constrained
    }

    pub fn set(&mut self, i: usize, constrained: bool) {
        self.constrained[i] = constrained;
    }

    /// Indices of constrained positions.
    pub fn constrained_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.constrained[i]).collect()
    }
}
