//! Limited-memory BFGS inverse-Hessian approximation with a fixed ring buffer.

use super::dot;

#[derive(Debug, Clone)]
pub struct Lbfgs {
    n: usize,
    memory: usize,
    s: Vec<f64>,
    y: Vec<f64>,
    rho: Vec<f64>,
    alpha: Vec<f64>,
    /// Index of the most recent pair.
    head: usize,
    len: usize,
}

impl Lbfgs {
    /// Minimum curvature `<s, y> / |s|^2` for a pair to be stored.
    const CURVATURE_EPS: f64 = 1e-12;

    pub fn new(n: usize, memory: usize) -> Self {
        assert!(memory >= 1, "L-BFGS memory must be >= 1");
        Self {
            n,
            memory,
            s: vec![0.0; n * memory],
            y: vec![0.0; n * memory],
            rho: vec![0.0; memory],
            alpha: vec![0.0; memory],
            head: memory - 1,
            len: 0,
        }
    }

    pub fn reset(&mut self) {
        self.len = 0;
        self.head = self.memory - 1;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Stores the pair unless its curvature is too small. Returns whether it was kept.
    pub fn update(&mut self, s: &[f64], y: &[f64]) -> bool {
        debug_assert_eq!(s.len(), self.n);
        let ys = dot(y, s);
        let ss = dot(s, s);
        if !(ys.is_finite() && ss > 0.0 && ys > Self::CURVATURE_EPS * ss) {
            return false;
        }
        self.head = (self.head + 1) % self.memory;
        let off = self.head * self.n;
        self.s[off..off + self.n].copy_from_slice(s);
        self.y[off..off + self.n].copy_from_slice(y);
        self.rho[self.head] = 1.0 / ys;
        self.len = (self.len + 1).min(self.memory);
        true
    }

    /// Overwrites `q` with `H q` (two-loop recursion). With no stored pairs `H = I`.
    pub fn apply(&mut self, q: &mut [f64]) {
        if self.len == 0 {
            return;
        }
        let n = self.n;
        let slot = |k: usize| (self.head + self.memory - k) % self.memory;
        for k in 0..self.len {
            let i = slot(k);
            let s = &self.s[i * n..(i + 1) * n];
            let a = self.rho[i] * dot(s, q);
            self.alpha[i] = a;
            let y = &self.y[i * n..(i + 1) * n];
            for (qj, yj) in q.iter_mut().zip(y) {
                *qj -= a * yj;
            }
        }
        let newest = slot(0);
        let (s, y) = (
            &self.s[newest * n..(newest + 1) * n],
            &self.y[newest * n..(newest + 1) * n],
        );
        let gamma0 = dot(s, y) / dot(y, y);
        for qj in q.iter_mut() {
            *qj *= gamma0;
        }
        for k in (0..self.len).rev() {
            let i = slot(k);
            let y = &self.y[i * n..(i + 1) * n];
            let b = self.rho[i] * dot(y, q);
            let s = &self.s[i * n..(i + 1) * n];
            let a = self.alpha[i];
            for (qj, sj) in q.iter_mut().zip(s) {
                *qj += (a - b) * sj;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn secant_equation_holds_for_newest_pair() {
        let mut l = Lbfgs::new(3, 5);
        l.update(&[1.0, 0.0, 0.0], &[2.0, 0.1, 0.0]);
        let s = [0.2, 1.0, -0.5];
        let y = [0.3, 3.0, -1.0];
        assert!(l.update(&s, &y));
        let mut q = y;
        l.apply(&mut q);
        for (a, b) in q.iter().zip(&s) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_negative_curvature() {
        let mut l = Lbfgs::new(2, 3);
        assert!(!l.update(&[1.0, 0.0], &[-1.0, 0.0]));
        assert!(l.is_empty());
    }

    #[test]
    fn ring_buffer_keeps_last_pairs() {
        let mut l = Lbfgs::new(1, 2);
        for k in 1..=5 {
            assert!(l.update(&[1.0], &[k as f64]));
        }
        assert_eq!(l.len(), 2);
        // 1D: the newest pair alone fixes H = s/y.
        let mut q = [5.0];
        l.apply(&mut q);
        assert!((q[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_inverse_recovered_after_n_pairs() {
        // Diagonal Hessian diag(1, 4): after probing each axis, H applied to a
        // gradient reproduces the Newton step.
        let mut l = Lbfgs::new(2, 4);
        l.update(&[1.0, 0.0], &[1.0, 0.0]);
        l.update(&[0.0, 1.0], &[0.0, 4.0]);
        let mut q = [2.0, 8.0];
        l.apply(&mut q);
        assert!((q[0] - 2.0).abs() < 1e-12 && (q[1] - 2.0).abs() < 1e-12, "{q:?}");
    }
}
