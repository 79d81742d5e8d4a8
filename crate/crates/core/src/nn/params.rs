use ndarray::Array2;

/// Index of a named matrix in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Ordered collection of named parameter matrices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    /// Total number of scalar weights.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Dense gradient buffers shaped like a [`ParamStore`], allocated on first touch.
#[derive(Clone, Debug)]
pub struct Gradients {
    shapes: Vec<(usize, usize)>,
    values: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn new(store: &ParamStore) -> Self {
        Gradients {
            shapes: store.values.iter().map(Array2::dim).collect(),
            values: vec![None; store.len()],
        }
    }

    fn slot(&mut self, id: ParamId) -> &mut Array2<f64> {
        let shape = self.shapes[id.0];
        self.values[id.0].get_or_insert_with(|| Array2::zeros(shape))
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Array2<f64>) {
        *self.slot(id) += g;
    }

    pub(crate) fn scatter_rows(&mut self, id: ParamId, rows: &[usize], g: &Array2<f64>) {
        let slot = self.slot(id);
        for (i, &r) in rows.iter().enumerate() {
            let mut dst = slot.row_mut(r);
            dst += &g.row(i);
        }
    }

    /// Gradient for `id`; zeros when the parameter was never touched.
    pub fn get(&self, id: ParamId) -> Array2<f64> {
        self.values[id.0]
            .clone()
            .unwrap_or_else(|| Array2::zeros(self.shapes[id.0]))
    }

    pub fn get_ref(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.values[id.0].as_ref()
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.values.iter_mut().flatten() {
            *g *= k;
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.values
            .iter()
            .flatten()
            .all(|g| g.iter().all(|x| x.is_finite()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array2<f64>)> {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}
