use crate::error::{Error, Result};

/// One line of the explanation dump:
/// `sample_id \t true \t pred \t alpha_1 .. alpha_K \t role,tags`.
///
/// The aggregate row uses `mean` as its id and `-` for both labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplainRow {
    pub sample_id: String,
    pub true_label: Option<usize>,
    pub pred_label: Option<usize>,
    pub alpha: Vec<f64>,
    pub tags: Vec<String>,
}

fn label(v: Option<usize>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

impl ExplainRow {
    pub fn to_line(&self) -> String {
        let mut cols = vec![self.sample_id.clone(), label(self.true_label), label(self.pred_label)];
        cols.extend(self.alpha.iter().map(|a| format!("{a:.6}")));
        cols.push(self.tags.join(","));
        cols.join("\t")
    }

    pub fn parse(line: &str, line_no: usize) -> Result<Self> {
        let err = |message: String| Error::Parse { line: line_no, message };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 5 {
            return Err(err(format!("expected at least 5 tab-separated columns, got {}", cols.len())));
        }
        let parse_label = |s: &str| -> Result<Option<usize>> {
            if s == "-" {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| err(format!("bad label {s:?}")))
            }
        };
        let tags: Vec<String> = cols[cols.len() - 1].split(',').map(str::to_string).collect();
        let alpha = cols[3..cols.len() - 1]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| err(format!("bad weight {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if alpha.len() != tags.len() {
            return Err(err(format!("{} weights for {} role tags", alpha.len(), tags.len())));
        }
        Ok(Self {
            sample_id: cols[0].to_string(),
            true_label: parse_label(cols[1])?,
            pred_label: parse_label(cols[2])?,
            alpha,
            tags,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_round_trip() {
        let row = ExplainRow {
            sample_id: "P00003".into(),
            true_label: Some(1),
            pred_label: Some(2),
            alpha: vec![0.232, 0.167, 0.173, 0.3, 0.128],
            tags: ["uni_W", "uni_T", "uni_G", "syn", "rduc"].map(String::from).to_vec(),
        };
        let line = row.to_line();
        assert_eq!(line, "P00003\t1\t2\t0.232000\t0.167000\t0.173000\t0.300000\t0.128000\tuni_W,uni_T,uni_G,syn,rduc");
        assert_eq!(ExplainRow::parse(&line, 1).unwrap(), row);
    }

    #[test]
    fn mean_row_and_errors() {
        let row = ExplainRow::parse("mean\t-\t-\t1.000000\tfusion", 4).unwrap();
        assert_eq!(row.true_label, None);
        assert_eq!(row.alpha, vec![1.0]);
        assert!(matches!(ExplainRow::parse("a\t1\t1\tfusion", 2), Err(Error::Parse { line: 2, .. })));
        assert!(ExplainRow::parse("a\t1\t1\t0.5\t0.5\tfusion", 3).is_err());
        assert!(ExplainRow::parse("a\tx\t1\t1.0\tfusion", 3).is_err());
    }
}
