//! JSON model files.
//!
//! ```json
//! {"variant": "standard", "M": 2, "A": [[0.5, 0], [0, 0.3]], "W": [[0, 1], [-1, 0]], "h1": [0.1, 0.2]}
//! {"variant": "general-2d", "a_l": -1.77, "a_r": 1.5, "b_l": -0.9, "b_r": -0.75,
//!  "c": 0.6, "d": 0.15, "h1": -0.7, "h2": -0.4}
//! ```
//! `A` may be given as a full matrix or as its diagonal.

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::model::{Map2D, PlModel, Variant};
use crate::scalar::Real;

fn err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

fn num<T: Real>(v: &Value, what: &str) -> Result<T> {
    let x = v.as_f64().ok_or_else(|| err(format!("{what}: expected a number")))?;
    T::from_f64(x).ok_or_else(|| err(format!("{what}: value not representable")))
}

fn vector<T: Real>(v: &Value, what: &str) -> Result<DVector<T>> {
    let arr = v.as_array().ok_or_else(|| err(format!("{what}: expected an array")))?;
    let xs = arr.iter().map(|x| num(x, what)).collect::<Result<Vec<T>>>()?;
    Ok(DVector::from_vec(xs))
}

fn matrix<T: Real>(v: &Value, what: &str) -> Result<DMatrix<T>> {
    let rows = v.as_array().ok_or_else(|| err(format!("{what}: expected nested arrays")))?;
    let parsed = rows.iter().map(|r| vector::<T>(r, what)).collect::<Result<Vec<_>>>()?;
    let ncols = parsed.first().map(|r| r.len()).unwrap_or(0);
    if parsed.iter().any(|r| r.len() != ncols) {
        return Err(err(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(parsed.len(), ncols, |i, j| parsed[i][j]))
}

/// `A` given either as a matrix or as a diagonal vector.
fn square_or_diag<T: Real>(v: &Value, what: &str) -> Result<DMatrix<T>> {
    match v.as_array().and_then(|a| a.first()) {
        Some(first) if first.is_array() => matrix(v, what),
        _ => Ok(DMatrix::from_diagonal(&vector::<T>(v, what)?)),
    }
}

fn field<'a>(obj: &'a Map<String, Value>, names: &[&str]) -> Result<&'a Value> {
    names
        .iter()
        .find_map(|n| obj.get(*n))
        .ok_or_else(|| err(format!("missing field '{}'", names[0])))
}

fn check_count(obj: &Map<String, Value>, key: &str, actual: usize) -> Result<()> {
    if let Some(v) = obj.get(key) {
        let n = v.as_u64().ok_or_else(|| err(format!("{key}: expected a non-negative integer")))?;
        if n as usize != actual {
            return Err(err(format!("{key} = {n} does not match matrix dimensions ({actual})")));
        }
    }
    Ok(())
}

pub fn model_from_json<T: Real>(text: &str) -> Result<PlModel<T>> {
    let value: Value = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| err("model file must be a JSON object"))?;
    let variant: Variant = serde_json::from_value(field(obj, &["variant"])?.clone()).map_err(|e| err(format!("variant: {e}")))?;
    let model = match variant {
        Variant::General2d => {
            let g = |n: &str| num::<T>(field(obj, &[n])?, n);
            PlModel::general_2d(Map2D {
                a_l: g("a_l")?,
                a_r: g("a_r")?,
                b_l: g("b_l")?,
                b_r: g("b_r")?,
                c: g("c")?,
                d: g("d")?,
                h1: g("h1")?,
                h2: g("h2")?,
            })
        }
        Variant::Standard | Variant::AlmostLinear => {
            let a = square_or_diag::<T>(field(obj, &["A"])?, "A")?;
            let w = matrix::<T>(field(obj, &["W"])?, "W")?;
            let h = vector::<T>(field(obj, &["h1", "h"])?, "h1")?;
            check_count(obj, "M", h.len())?;
            if variant == Variant::Standard {
                PlModel::standard(a, w, h)
            } else {
                let p = field(obj, &["P"])?.as_u64().ok_or_else(|| err("P: expected a non-negative integer"))? as usize;
                PlModel::almost_linear(a, w, h, p)
            }
            .map_err(|e| err(e.to_string()))?
        }
        Variant::Shallow => {
            let a = square_or_diag::<T>(field(obj, &["A"])?, "A")?;
            let w1 = matrix::<T>(field(obj, &["W1"])?, "W1")?;
            let w2 = matrix::<T>(field(obj, &["W2"])?, "W2")?;
            let h1 = vector::<T>(field(obj, &["h1", "h"])?, "h1")?;
            let h2 = vector::<T>(field(obj, &["h2"])?, "h2")?;
            check_count(obj, "M", h1.len())?;
            check_count(obj, "H", h2.len())?;
            PlModel::shallow(a, w1, w2, h1, h2).map_err(|e| err(e.to_string()))?
        }
    };
    Ok(model)
}

fn vec_json<T: Real>(v: &DVector<T>) -> Value {
    Value::Array(v.iter().map(|x| json!(x.as_f64())).collect())
}

fn mat_json<T: Real>(m: &DMatrix<T>) -> Value {
    Value::Array((0..m.nrows()).map(|i| Value::Array((0..m.ncols()).map(|j| json!(m[(i, j)].as_f64())).collect())).collect())
}

pub fn model_to_json<T: Real>(model: &PlModel<T>) -> Value {
    match model {
        PlModel::Standard { a, w, h } => json!({
            "variant": "standard", "M": h.len(), "A": mat_json(a), "W": mat_json(w), "h1": vec_json(h)
        }),
        PlModel::AlmostLinear { a, w, h, p } => json!({
            "variant": "almost-linear", "M": h.len(), "P": p, "A": mat_json(a), "W": mat_json(w), "h1": vec_json(h)
        }),
        PlModel::Shallow { a, w1, w2, h1, h2 } => json!({
            "variant": "shallow", "M": h1.len(), "H": h2.len(), "A": mat_json(a),
            "W1": mat_json(w1), "W2": mat_json(w2), "h1": vec_json(h1), "h2": vec_json(h2)
        }),
        PlModel::General2d(m) => json!({
            "variant": "general-2d",
            "a_l": m.a_l.as_f64(), "a_r": m.a_r.as_f64(), "b_l": m.b_l.as_f64(), "b_r": m.b_r.as_f64(),
            "c": m.c.as_f64(), "d": m.d.as_f64(), "h1": m.h1.as_f64(), "h2": m.h2.as_f64()
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_all_variants() {
        let texts = [
            r#"{"variant":"standard","M":2,"A":[0.5,0.3],"W":[[0,1],[-1,0]],"h1":[0.1,0.2]}"#,
            r#"{"variant":"almost-linear","M":2,"P":1,"A":[[0.5,0],[0,0.3]],"W":[[0,1],[-1,0]],"h1":[0.1,0.2]}"#,
            r#"{"variant":"shallow","M":2,"H":3,"A":[0.5,0.3],"W1":[[1,0,1],[0,1,1]],"W2":[[1,0],[0,1],[1,1]],"h1":[0.1,0.2],"h2":[0,0.1,-0.1]}"#,
            r#"{"variant":"general-2d","a_l":-1.77,"a_r":1.5,"b_l":-0.9,"b_r":-0.75,"c":0.6,"d":0.15,"h1":-0.7,"h2":-0.4}"#,
        ];
        for t in texts {
            let m: PlModel<f64> = model_from_json(t).unwrap();
            let back: PlModel<f64> = model_from_json(&model_to_json(&m).to_string()).unwrap();
            assert_eq!(m, back);
        }
    }

    #[test]
    fn rejects_bad_dims() {
        let bad = r#"{"variant":"standard","M":2,"A":[[1,0],[0,1]],"W":[[0,1,3],[-1,0,2]],"h1":[0.1,0.2]}"#;
        assert!(model_from_json::<f64>(bad).is_err());
        let wrong_m = r#"{"variant":"standard","M":3,"A":[1,1],"W":[[0,1],[-1,0]],"h1":[0.1,0.2]}"#;
        assert!(model_from_json::<f64>(wrong_m).is_err());
        assert!(model_from_json::<f64>("{").is_err());
        assert!(model_from_json::<f64>(r#"{"variant":"other"}"#).is_err());
    }
}
