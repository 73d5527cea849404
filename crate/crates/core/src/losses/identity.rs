use crate::error::Result;
use crate::numerics::{Real, Tape, Var};

/// Mean cross-entropy of `logits [B, C]` against integer labels.
pub fn id_loss<T: Real>(tape: &mut Tape<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    tape.cross_entropy(logits, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn uniform_logits_give_log_classes() {
        let mut tape = Tape::<f64>::new();
        let l = tape.input(Tensor::zeros(&[3, 4]));
        let loss = id_loss(&mut tape, l, &[0, 1, 3]).unwrap();
        assert!((tape.value(loss).item() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_give_near_zero() {
        let mut tape = Tape::<f32>::new();
        let l = tape.input(Tensor::new(vec![2, 3], vec![50.0, 0.0, 0.0, 0.0, 0.0, 50.0]).unwrap());
        let loss = id_loss(&mut tape, l, &[0, 2]).unwrap();
        assert!(tape.value(loss).item() < 1e-6);
    }

    #[test]
    fn matches_direct_softmax_formula() {
        let logits: Vec<f64> = (0..15).map(|i| ((i * 7919) % 23) as f64 / 5.0 - 2.0).collect();
        let labels = [4, 0, 2];
        let mut tape = Tape::<f64>::new();
        let l = tape.input(Tensor::new(vec![3, 5], logits.clone()).unwrap());
        let loss = id_loss(&mut tape, l, &labels).unwrap();
        let mut expect = 0.0;
        for (b, &y) in labels.iter().enumerate() {
            let row = &logits[b * 5..(b + 1) * 5];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            expect -= (row[y].exp() / z).ln();
        }
        expect /= 3.0;
        assert!((tape.value(loss).item() - expect).abs() < 1e-6);
    }
}
