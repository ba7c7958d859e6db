//! Multi-field categorical embeddings.
//!
//! Each field owns a `(cardinality + 1) × embed_dim` table. Row 0 is the
//! padding / out-of-vocabulary row: it starts at zero and the tape never
//! routes gradient into it, so it stays zero for the life of the model.

use std::collections::HashSet;

use rand::Rng;

use crate::autograd::{hstack, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const EMBED_INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: String,
    pub cardinality: usize,
    pub embed_dim: usize,
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, cardinality: usize, embed_dim: usize) -> Self {
        FieldSpec {
            name: name.into(),
            cardinality,
            embed_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    pub user_fields: Vec<FieldSpec>,
    pub item_fields: Vec<FieldSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    User,
    Item,
}

impl FeatureSchema {
    pub fn new(user_fields: Vec<FieldSpec>, item_fields: Vec<FieldSpec>) -> Result<Self> {
        let schema = FeatureSchema {
            user_fields,
            item_fields,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for f in self.user_fields.iter().chain(&self.item_fields) {
            if f.cardinality == 0 {
                return Err(Error::invalid(format!(
                    "field `{}` has cardinality 0",
                    f.name
                )));
            }
            if f.embed_dim == 0 {
                return Err(Error::invalid(format!(
                    "field `{}` has embed_dim 0",
                    f.name
                )));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(Error::invalid(format!("duplicate field name `{}`", f.name)));
            }
        }
        if self.item_fields.is_empty() {
            return Err(Error::invalid("schema needs at least one item field"));
        }
        Ok(())
    }

    pub fn fields(&self, side: Side) -> &[FieldSpec] {
        match side {
            Side::User => &self.user_fields,
            Side::Item => &self.item_fields,
        }
    }

    /// Flattened user width `d_u`.
    pub fn user_dim(&self) -> usize {
        self.user_fields.iter().map(|f| f.embed_dim).sum()
    }

    /// Flattened item width `d_i`.
    pub fn item_dim(&self) -> usize {
        self.item_fields.iter().map(|f| f.embed_dim).sum()
    }

    /// Same fields and cardinalities, every embedding width set to `dim`.
    pub fn with_embed_dim(&self, dim: usize) -> Self {
        let set = |fields: &[FieldSpec]| {
            fields
                .iter()
                .map(|f| FieldSpec::new(f.name.clone(), f.cardinality, dim))
                .collect()
        };
        FeatureSchema {
            user_fields: set(&self.user_fields),
            item_fields: set(&self.item_fields),
        }
    }

    /// Checks one record's indices against this side's fields.
    pub fn check_values(&self, side: Side, values: &[usize]) -> Result<()> {
        let fields = self.fields(side);
        if values.len() != fields.len() {
            return Err(Error::invalid(format!(
                "expected {} {:?} field values, got {}",
                fields.len(),
                side,
                values.len()
            )));
        }
        for (f, &v) in fields.iter().zip(values) {
            if v > f.cardinality {
                return Err(Error::IndexOutOfRange {
                    field: f.name.clone(),
                    index: v,
                    cardinality: f.cardinality,
                });
            }
        }
        Ok(())
    }
}

/// One embedding table per field of one side.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTables {
    pub tables: Vec<Matrix>,
}

impl EmbeddingTables {
    pub fn init<R: Rng + ?Sized>(fields: &[FieldSpec], rng: &mut R) -> Self {
        Self::init_scaled(fields, EMBED_INIT_SCALE, rng)
    }

    pub fn init_scaled<R: Rng + ?Sized>(fields: &[FieldSpec], scale: f64, rng: &mut R) -> Self {
        let tables = fields
            .iter()
            .map(|f| {
                let mut t = Matrix::uniform(f.cardinality + 1, f.embed_dim, scale, rng);
                t.row_mut(0).fill(0.0);
                t
            })
            .collect();
        EmbeddingTables { tables }
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.tables.iter().map(|t| tape.leaf(t.clone())).collect()
    }
}

/// Concatenates the per-field rows for one record, in schema order.
pub fn embed_record(
    fields: &[FieldSpec],
    tables: &EmbeddingTables,
    values: &[usize],
) -> Result<Vec<f64>> {
    if values.len() != fields.len() {
        return Err(Error::invalid(format!(
            "expected {} field values, got {}",
            fields.len(),
            values.len()
        )));
    }
    let mut out = Vec::with_capacity(fields.iter().map(|f| f.embed_dim).sum());
    for ((f, table), &v) in fields.iter().zip(&tables.tables).zip(values) {
        if v > f.cardinality {
            return Err(Error::IndexOutOfRange {
                field: f.name.clone(),
                index: v,
                cardinality: f.cardinality,
            });
        }
        if v == 0 {
            out.extend(std::iter::repeat_n(0.0, f.embed_dim));
        } else {
            out.extend_from_slice(table.row(v));
        }
    }
    Ok(out)
}

/// Taped lookup for a list of records: returns `records × Σ embed_dim`.
///
/// `records[r]` holds one index per field.
pub fn embed_rows<'t>(
    fields: &[FieldSpec],
    tables: &[Var<'t>],
    records: &[&[usize]],
) -> Result<Var<'t>> {
    let mut parts = Vec::with_capacity(fields.len());
    for (fi, (f, table)) in fields.iter().zip(tables).enumerate() {
        let mut idx = Vec::with_capacity(records.len());
        for rec in records {
            let v = *rec
                .get(fi)
                .ok_or_else(|| Error::invalid(format!("record missing field `{}`", f.name)))?;
            if v > f.cardinality {
                return Err(Error::IndexOutOfRange {
                    field: f.name.clone(),
                    index: v,
                    cardinality: f.cardinality,
                });
            }
            idx.push(v);
        }
        parts.push(table.gather(&idx)?);
    }
    hstack(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_fields() -> Vec<FieldSpec> {
        vec![FieldSpec::new("a", 3, 2), FieldSpec::new("b", 4, 3)]
    }

    #[test]
    fn padding_row_is_zero() {
        let fields = two_fields();
        let tables = EmbeddingTables::init(&fields, &mut ChaCha8Rng::seed_from_u64(1));
        let v = embed_record(&fields, &tables, &[0, 0]).unwrap();
        assert_eq!(v, vec![0.0; 5]);
        assert!(tables.tables[0]
            .row(1)
            .iter()
            .all(|x| x.abs() <= EMBED_INIT_SCALE));
    }

    #[test]
    fn single_field_lookup_is_row() {
        let fields = vec![FieldSpec::new("x", 5, 3)];
        let tables = EmbeddingTables::init(&fields, &mut ChaCha8Rng::seed_from_u64(2));
        for k in 0..=5 {
            assert_eq!(
                embed_record(&fields, &tables, &[k]).unwrap(),
                tables.tables[0].row(k)
            );
        }
    }

    #[test]
    fn two_field_concatenation() {
        let fields = two_fields();
        let tables = EmbeddingTables {
            tables: vec![
                Matrix::from_rows(&[[0.0, 0.0], [1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]),
                Matrix::from_rows(&[
                    [0.0, 0.0, 0.0],
                    [7.0, 8.0, 9.0],
                    [10.0, 11.0, 12.0],
                    [13.0, 14.0, 15.0],
                    [16.0, 17.0, 18.0],
                ]),
            ],
        };
        let v = embed_record(&fields, &tables, &[1, 2]).unwrap();
        assert_eq!(v, vec![1.0, 2.0, 10.0, 11.0, 12.0]);
    }

    #[test]
    fn rejects_bad_indices() {
        let fields = two_fields();
        let tables = EmbeddingTables::init(&fields, &mut ChaCha8Rng::seed_from_u64(3));
        assert!(matches!(
            embed_record(&fields, &tables, &[4, 0]),
            Err(Error::IndexOutOfRange { index: 4, .. })
        ));
        assert!(embed_record(&fields, &tables, &[1]).is_err());
    }

    #[test]
    fn schema_validation() {
        assert!(FeatureSchema::new(
            vec![FieldSpec::new("a", 0, 2)],
            vec![FieldSpec::new("b", 1, 1)]
        )
        .is_err());
        assert!(FeatureSchema::new(
            vec![FieldSpec::new("a", 2, 2)],
            vec![FieldSpec::new("a", 1, 1)]
        )
        .is_err());
        let s = FeatureSchema::new(two_fields(), vec![FieldSpec::new("c", 9, 4)]).unwrap();
        assert_eq!((s.user_dim(), s.item_dim()), (5, 4));
    }

    #[test]
    fn gradient_touches_only_looked_up_rows() {
        let fields = two_fields();
        let tables = EmbeddingTables::init(&fields, &mut ChaCha8Rng::seed_from_u64(4));
        let tape = Tape::new();
        let vars = tables.bind(&tape);
        let rows = embed_rows(&fields, &vars, &[&[1, 0], &[1, 3]]).unwrap();
        let loss = rows.sum();
        let grads = tape.backward(loss).unwrap();
        let ga = grads.wrt(vars[0]);
        let gb = grads.wrt(vars[1]);
        assert_eq!(ga.row(1), &[2.0, 2.0]);
        for r in [0, 2, 3] {
            assert!(ga.row(r).iter().all(|&v| v == 0.0));
        }
        assert_eq!(gb.row(3), &[1.0, 1.0, 1.0]);
        for r in [0, 1, 2, 4] {
            assert!(gb.row(r).iter().all(|&v| v == 0.0));
        }
        assert_eq!(rows.cols(), 5);
    }
}
