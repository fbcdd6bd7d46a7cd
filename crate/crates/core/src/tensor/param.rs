use super::{Matrix, Real, Result, TensorError};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Parameter<T = f32> {
    pub name: String,
    pub value: Matrix<T>,
    pub grad: Matrix<T>,
    /// Whether decoupled weight decay applies (off for biases and norm gains).
    pub decay: bool,
}

/// Ordered collection of trainable parameters. Registration order is the
/// checkpoint order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T = f32> {
    params: Vec<Parameter<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Matrix<T>, decay: bool) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter {name}"
        );
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.params.push(Parameter {
            name,
            value,
            grad,
            decay,
        });
        ParamId(self.params.len() - 1)
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &Matrix<T> {
        &self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Copies every value matrix; used to snapshot the best checkpoint.
    pub fn snapshot(&self) -> Vec<Matrix<T>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, values: &[Matrix<T>]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(TensorError::Contract(format!(
                "snapshot has {} parameters, store has {}",
                values.len(),
                self.params.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(TensorError::Shape {
                    op: "restore",
                    left: p.value.shape(),
                    right: v.shape(),
                });
            }
            p.value = v.clone();
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    decay: p.decay,
                })
                .collect(),
        }
    }
}

/// Gradients produced by one backward pass, indexed by [`ParamId`].
/// Parameters the loss does not reach stay `None`.
#[derive(Clone, Debug)]
pub struct ParamGrads<T = f32> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Real> ParamGrads<T> {
    pub fn new(num_params: usize) -> Self {
        Self {
            grads: vec![None; num_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: Matrix<T>) {
        match &mut self.grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    pub(crate) fn entry(&mut self, id: ParamId, rows: usize, cols: usize) -> &mut Matrix<T> {
        self.grads[id.0].get_or_insert_with(|| Matrix::zeros(rows, cols))
    }

    /// Adds `scale * grads` into each parameter's `grad` buffer.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>, scale: T) {
        for (p, g) in store.params.iter_mut().zip(&self.grads) {
            if let Some(g) = g {
                p.grad.add_scaled(g, scale);
            }
        }
    }

    /// Sum of another gradient set into this one.
    pub fn merge(&mut self, other: ParamGrads<T>) {
        for (i, g) in other.grads.into_iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }
}
