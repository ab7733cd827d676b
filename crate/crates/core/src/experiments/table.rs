use std::io::{Read, Write};

use crate::error::{Result, TomoError};

pub const CSV_HEADER: [&str; 14] = [
    "sweep_kind",
    "coord_name",
    "coord_value",
    "N",
    "M",
    "mse_dqst",
    "mse_dqst_se",
    "mse_dpt",
    "mse_dpt_se",
    "crlb",
    "fid_dqst",
    "fid_dpt",
    "bias_fro",
    "trials_used",
];

/// Rounds to the 12 significant digits stored in the CSV.
pub fn round_sig12(x: f64) -> f64 {
    if x.is_finite() {
        format_sig12(x).parse().expect("formatted float parses")
    } else {
        x
    }
}

pub fn format_sig12(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_owned()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_owned()
    } else {
        format!("{x:.11e}")
    }
}

/// One sweep point. Fidelities are fractions in `[0, 1]`; unavailable cells
/// hold NaN.
#[derive(Clone, Debug)]
pub struct ResultRow {
    pub sweep_kind: String,
    pub coord_name: String,
    pub coord_value: f64,
    pub n_events: u64,
    pub probes: usize,
    pub mse_dqst: f64,
    pub mse_dqst_se: f64,
    pub mse_dpt: f64,
    pub mse_dpt_se: f64,
    pub crlb: f64,
    pub fid_dqst: f64,
    pub fid_dpt: f64,
    /// Bias of the effective DPT design in the configured norm.
    pub bias: f64,
    pub trials_used: usize,
}

fn same(a: f64, b: f64) -> bool {
    a == b || (a.is_nan() && b.is_nan())
}

impl PartialEq for ResultRow {
    fn eq(&self, o: &Self) -> bool {
        self.sweep_kind == o.sweep_kind
            && self.coord_name == o.coord_name
            && self.n_events == o.n_events
            && self.probes == o.probes
            && self.trials_used == o.trials_used
            && self
                .floats()
                .iter()
                .zip(o.floats().iter())
                .all(|(&a, &b)| same(a, b))
    }
}

impl ResultRow {
    fn floats(&self) -> [f64; 9] {
        [
            self.coord_value,
            self.mse_dqst,
            self.mse_dqst_se,
            self.mse_dpt,
            self.mse_dpt_se,
            self.crlb,
            self.fid_dqst,
            self.fid_dpt,
            self.bias,
        ]
    }

    fn floats_mut(&mut self) -> [&mut f64; 9] {
        [
            &mut self.coord_value,
            &mut self.mse_dqst,
            &mut self.mse_dqst_se,
            &mut self.mse_dpt,
            &mut self.mse_dpt_se,
            &mut self.crlb,
            &mut self.fid_dqst,
            &mut self.fid_dpt,
            &mut self.bias,
        ]
    }

    /// Rounds every real cell to its CSV precision.
    pub fn quantized(mut self) -> Self {
        for x in self.floats_mut() {
            *x = round_sig12(*x);
        }
        self
    }

    fn record(&self) -> Vec<String> {
        let f = self.floats();
        let mut out = vec![
            self.sweep_kind.clone(),
            self.coord_name.clone(),
            format_sig12(f[0]),
            self.n_events.to_string(),
            self.probes.to_string(),
        ];
        out.extend(f[1..].iter().map(|&x| format_sig12(x)));
        out.push(self.trials_used.to_string());
        out
    }

    fn from_record(rec: &csv::StringRecord, line: usize) -> Result<Self> {
        if rec.len() != CSV_HEADER.len() {
            return Err(TomoError::invalid(format!(
                "CSV line {line}: expected {} fields, found {}",
                CSV_HEADER.len(),
                rec.len()
            )));
        }
        let real = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| TomoError::invalid(format!("CSV line {line}, column {}: {e}", CSV_HEADER[i])))
        };
        let int = |i: usize| -> Result<u64> {
            rec[i]
                .parse::<u64>()
                .map_err(|e| TomoError::invalid(format!("CSV line {line}, column {}: {e}", CSV_HEADER[i])))
        };
        Ok(ResultRow {
            sweep_kind: rec[0].to_owned(),
            coord_name: rec[1].to_owned(),
            coord_value: real(2)?,
            n_events: int(3)?,
            probes: int(4)? as usize,
            mse_dqst: real(5)?,
            mse_dqst_se: real(6)?,
            mse_dpt: real(7)?,
            mse_dpt_se: real(8)?,
            crlb: real(9)?,
            fid_dqst: real(10)?,
            fid_dpt: real(11)?,
            bias: real(12)?,
            trials_used: int(13)? as usize,
        })
    }
}

/// Rows in sweep order, serialized as `results.csv`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn new(rows: Vec<ResultRow>) -> Self {
        ResultTable {
            rows: rows.into_iter().map(ResultRow::quantized).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row for the given `(N, M)` and sweep coordinate, if present.
    pub fn find(&self, n_events: u64, probes: usize, coord_value: f64) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.n_events == n_events && r.probes == probes && r.coord_value == coord_value)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let wrap = |e: csv::Error| TomoError::invalid(format!("CSV write failed: {e}"));
        w.write_record(CSV_HEADER).map_err(wrap)?;
        for row in &self.rows {
            w.write_record(row.record()).map_err(wrap)?;
        }
        w.flush()
            .map_err(|e| TomoError::invalid(format!("CSV write failed: {e}")))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("CSV output is UTF-8")
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r
            .headers()
            .map_err(|e| TomoError::invalid(format!("CSV header unreadable: {e}")))?;
        if header.iter().ne(CSV_HEADER.iter().copied()) {
            return Err(TomoError::invalid(format!("unexpected CSV header: {header:?}")));
        }
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| TomoError::invalid(format!("CSV line {}: {e}", i + 2)))?;
            rows.push(ResultRow::from_record(&rec, i + 2)?);
        }
        Ok(ResultTable { rows })
    }
}
