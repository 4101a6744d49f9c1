use rand::Rng;

use crate::{NeuroError, Result};

/// Index of a parameter inside its [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A named 2-D array of model state.
///
/// Trainable entries are updated by the optimizer; non-trainable entries
/// (batch-norm running statistics) are only persisted.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
    pub weight_decay_exempt: bool,
    pub trainable: bool,
}

impl Param {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered collection of every array a model owns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, p: Param) -> ParamId {
        assert!(
            self.params.iter().all(|q| q.name != p.name),
            "duplicate parameter name {}",
            p.name
        );
        self.params.push(p);
        ParamId(self.params.len() - 1)
    }

    /// Weight matrix `rows×cols` drawn from U(−1/√rows, 1/√rows); `rows` is the fan-in.
    pub fn weight<R: Rng + ?Sized>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) -> ParamId {
        let bound = 1.0 / (rows as f32).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        self.push(Param {
            name: name.to_string(),
            rows,
            cols,
            data,
            weight_decay_exempt: false,
            trainable: true,
        })
    }

    /// Trainable array filled with `value` and exempt from weight decay
    /// (biases, normalization scales and shifts, positional tables).
    pub fn constant(&mut self, name: &str, rows: usize, cols: usize, value: f32) -> ParamId {
        self.push(Param {
            name: name.to_string(),
            rows,
            cols,
            data: vec![value; rows * cols],
            weight_decay_exempt: true,
            trainable: true,
        })
    }

    /// Non-trainable persisted state.
    pub fn buffer(&mut self, name: &str, rows: usize, cols: usize, value: f32) -> ParamId {
        self.push(Param {
            name: name.to_string(),
            rows,
            cols,
            data: vec![value; rows * cols],
            weight_decay_exempt: true,
            trainable: false,
        })
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(Param::len).sum()
    }

    /// Overwrite every array from `(name, data)` pairs, matching by name.
    /// All entries must be present with matching element counts.
    pub fn load_named<'a, I>(&mut self, arrays: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a [f32])>,
    {
        let mut seen = vec![false; self.params.len()];
        for (name, data) in arrays {
            let id = self
                .find(name)
                .ok_or_else(|| NeuroError::Shape(format!("unknown array '{name}'")))?;
            let p = &mut self.params[id.0];
            if p.data.len() != data.len() {
                return Err(NeuroError::Shape(format!(
                    "array '{name}' has {} values, expected {}",
                    data.len(),
                    p.data.len()
                )));
            }
            p.data.copy_from_slice(data);
            seen[id.0] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(NeuroError::Shape(format!(
                "array '{}' missing from source",
                self.params[missing].name
            )));
        }
        Ok(())
    }

    /// Set every trainable array whose name contains `pattern` to zero.
    pub fn zero_matching(&mut self, pattern: &str) {
        for p in self.params.iter_mut().filter(|p| p.name.contains(pattern)) {
            p.data.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weight_init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamSet::new();
        let w = ps.weight("w", 16, 8, &mut rng);
        let bound = 0.25;
        assert!(ps.get(w).data.iter().all(|x| x.abs() <= bound));
        assert!(!ps.get(w).weight_decay_exempt);
    }

    #[test]
    fn load_named_rejects_size_mismatch() {
        let mut ps = ParamSet::new();
        ps.constant("b", 1, 3, 0.0);
        let bad = [1.0f32, 2.0];
        assert!(ps.load_named([("b", &bad[..])]).is_err());
        let good = [1.0f32, 2.0, 3.0];
        ps.load_named([("b", &good[..])]).unwrap();
        assert_eq!(ps.get(ParamId(0)).data, vec![1.0, 2.0, 3.0]);
    }
}
