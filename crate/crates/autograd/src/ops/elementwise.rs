use crate::tensor::ensure_same_shape;
use crate::{invalid, Result, Tape, Tensor, Var};

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(
            out,
            &[a, b],
            Box::new(|ctx| vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(
            out,
            &[a, b],
            Box::new(|ctx| vec![Some(ctx.grad.clone()), Some(ctx.grad.scale(-1.0))]),
        ))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(
            out,
            &[a, b],
            Box::new(|ctx| {
                let ga = ctx
                    .needs(0)
                    .then(|| ctx.grad.zip_map(ctx.inputs[1], |g, y| g * y).unwrap());
                let gb = ctx
                    .needs(1)
                    .then(|| ctx.grad.zip_map(ctx.inputs[0], |g, x| g * x).unwrap());
                vec![ga, gb]
            }),
        ))
    }

    /// Multiplies by a fixed factor.
    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).scale(k);
        self.push(out, &[a], Box::new(move |ctx| vec![Some(ctx.grad.scale(k))]))
    }

    /// `alpha * x` where `alpha` is a one-element tensor.
    pub fn scalar_mul(&mut self, alpha: Var, x: Var) -> Result<Var> {
        if self.value(alpha).len() != 1 {
            return Err(invalid("scalar_mul", "alpha must hold one value"));
        }
        let a = self.value(alpha).item();
        let out = self.value(x).scale(a);
        Ok(self.push(
            out,
            &[alpha, x],
            Box::new(|ctx| {
                let ga = ctx.needs(0).then(|| {
                    let dot: f64 = ctx
                        .grad
                        .data()
                        .iter()
                        .zip(ctx.inputs[1].data())
                        .map(|(g, x)| g * x)
                        .sum();
                    Tensor::new(ctx.inputs[0].shape(), vec![dot]).unwrap()
                });
                let gx = ctx.needs(1).then(|| ctx.grad.scale(ctx.inputs[0].item()));
                vec![ga, gx]
            }),
        ))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(
            out,
            &[a],
            Box::new(|ctx| {
                vec![Some(
                    ctx.grad
                        .zip_map(ctx.inputs[0], |g, x| if x > 0.0 { g } else { 0.0 })
                        .unwrap(),
                )]
            }),
        )
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(
            out,
            &[a],
            Box::new(|ctx| vec![Some(Tensor::full(ctx.inputs[0].shape(), ctx.grad.item()))]),
        )
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Binary cross-entropy on a single logit against a target in `[0, 1]`,
    /// computed in the overflow-free form `max(z,0) - z*y + ln(1 + e^{-|z|})`.
    pub fn bce_with_logits(&mut self, logit: Var, target: f64) -> Result<Var> {
        if self.value(logit).len() != 1 {
            return Err(invalid("bce_with_logits", "logit must hold one value"));
        }
        let z = self.value(logit).item();
        let loss = z.max(0.0) - z * target + (-z.abs()).exp().ln_1p();
        Ok(self.push(
            Tensor::scalar(loss),
            &[logit],
            Box::new(move |ctx| {
                let z = ctx.inputs[0].item();
                let d = sigmoid(z) - target;
                vec![Some(
                    Tensor::new(ctx.inputs[0].shape(), vec![d * ctx.grad.item()]).unwrap(),
                )]
            }),
        ))
    }

    /// Elementwise product with a constant tensor of identical shape.
    pub fn mul_const(&mut self, a: Var, mask: &Tensor) -> Result<Var> {
        ensure_same_shape("mul_const", self.value(a), mask)?;
        let out = self.value(a).zip_map(mask, |x, m| x * m)?;
        let mask = mask.clone();
        Ok(self.push(
            out,
            &[a],
            Box::new(move |ctx| vec![Some(ctx.grad.zip_map(&mask, |g, m| g * m).unwrap())]),
        ))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
