//! Run reports: a key-value text document and flat CSV tables.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::config::ExperimentConfig;
use super::metrics::AccuracyMatrix;

/// Loss contributions of one update, each already multiplied by its weight.
/// Inactive terms are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLosses {
    pub task: u32,
    pub epoch: u32,
    pub step: u64,
    pub task_loss: f64,
    pub comp: f64,
    pub replay: Option<f64>,
    pub ewc: Option<f64>,
    pub distill: Option<f64>,
}

impl StepLosses {
    pub fn total(&self) -> f64 {
        self.task_loss + self.comp + self.replay.unwrap_or(0.0) + self.ewc.unwrap_or(0.0) + self.distill.unwrap_or(0.0)
    }

    pub fn breakdown(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "off".to_string(), |x| x.to_string());
        format!(
            "task={} comp={} replay={} ewc={} distill={} total={}",
            self.task_loss,
            self.comp,
            opt(self.replay),
            opt(self.ewc),
            opt(self.distill),
            self.total()
        )
    }
}

/// Bank size after one mutation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemorySample {
    pub event: u64,
    pub train_step: u64,
    pub bytes: usize,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub config: ExperimentConfig,
    pub accuracy: AccuracyMatrix,
    /// Absent for single-task runs.
    pub forgetting: Option<f64>,
    pub final_accuracy: f64,
    pub stm_records: usize,
    pub ltm_records: usize,
    pub bank_bytes: usize,
    pub memory_trace: Vec<MemorySample>,
    pub losses: Vec<StepLosses>,
    /// The final bank in its wire format.
    pub bank_file: Vec<u8>,
}

/// Per-(task, epoch) means of every loss term.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLosses {
    pub task: u32,
    pub epoch: u32,
    pub terms: BTreeMap<&'static str, f64>,
}

impl Report {
    pub fn peak_memory_bytes(&self) -> usize {
        self.memory_trace.iter().map(|m| m.bytes).max().unwrap_or(0)
    }

    pub fn loss_curves(&self) -> Vec<EpochLosses> {
        let mut out: Vec<(EpochLosses, usize)> = Vec::new();
        for l in &self.losses {
            if out.last().is_none_or(|(e, _)| e.task != l.task || e.epoch != l.epoch) {
                out.push((
                    EpochLosses {
                        task: l.task,
                        epoch: l.epoch,
                        terms: BTreeMap::new(),
                    },
                    0,
                ));
            }
            let (e, n) = out.last_mut().expect("pushed above");
            *n += 1;
            let entries = [
                ("task", Some(l.task_loss)),
                ("comp", Some(l.comp)),
                ("replay", l.replay),
                ("ewc", l.ewc),
                ("distill", l.distill),
                ("total", Some(l.total())),
            ];
            for (k, v) in entries {
                if let Some(v) = v {
                    *e.terms.entry(k).or_insert(0.0) += v;
                }
            }
        }
        out.into_iter()
            .map(|(mut e, n)| {
                e.terms.values_mut().for_each(|v| *v /= n as f64);
                e
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "# experiment report");
        for (k, v) in [
            ("method", c.method.clone()),
            ("seed", c.seed.to_string()),
            ("num_tasks", c.num_tasks.to_string()),
            ("classes_per_task", c.classes_per_task.to_string()),
            ("budget_bytes", c.budget_bytes.to_string()),
            ("inner_steps", c.maml.inner_steps.to_string()),
            ("d_shift", c.d_shift.to_string()),
            ("final_accuracy", self.final_accuracy.to_string()),
            (
                "forgetting",
                self.forgetting.map_or_else(|| "n/a".to_string(), |f| f.to_string()),
            ),
            ("peak_memory_bytes", self.peak_memory_bytes().to_string()),
            ("bank_bytes", self.bank_bytes.to_string()),
            ("stm_records", self.stm_records.to_string()),
            ("ltm_records", self.ltm_records.to_string()),
            ("train_steps", self.losses.len().to_string()),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        let t = self.accuracy.num_tasks();
        let _ = writeln!(s, "\n## accuracy (row: evaluated task, column: after task)");
        let _ = write!(s, "{:>6}", "");
        for after in 0..t {
            let _ = write!(s, " {:>8}", format!("T{}", after + 1));
        }
        let _ = writeln!(s);
        for eval in 0..t {
            let _ = write!(s, "{:>6}", format!("T{}", eval + 1));
            for after in 0..t {
                match self.accuracy.get(eval, after) {
                    Some(a) => {
                        let _ = write!(s, " {a:>8.4}");
                    }
                    None => {
                        let _ = write!(s, " {:>8}", "-");
                    }
                }
            }
            let _ = writeln!(s);
        }
        let _ = writeln!(s, "\n## loss (epoch means)");
        let _ = writeln!(
            s,
            "task epoch     total      task      comp    replay       ewc   distill"
        );
        for e in self.loss_curves() {
            let cell = |k: &str| {
                e.terms
                    .get(k)
                    .map_or_else(|| format!("{:>9}", "-"), |v| format!("{v:>9.4}"))
            };
            let _ = writeln!(
                s,
                "{:>4} {:>5} {} {} {} {} {} {}",
                e.task + 1,
                e.epoch + 1,
                cell("total"),
                cell("task"),
                cell("comp"),
                cell("replay"),
                cell("ewc"),
                cell("distill")
            );
        }
        s
    }

    /// Flat `seed,task,metric,value` rows; run-level metrics use task `all`.
    pub fn to_csv(&self) -> String {
        let seed = self.config.seed;
        let mut s = String::from("seed,task,metric,value\n");
        let t = self.accuracy.num_tasks();
        for after in 0..t {
            for eval in 0..=after {
                let a = self.accuracy.get(eval, after).expect("lower triangle is defined");
                let _ = writeln!(s, "{seed},{},acc_after_{},{a}", eval + 1, after + 1);
            }
        }
        if let Some(f) = self.forgetting {
            let _ = writeln!(s, "{seed},all,forgetting,{f}");
        }
        let _ = writeln!(s, "{seed},all,final_accuracy,{}", self.final_accuracy);
        let _ = writeln!(s, "{seed},all,peak_memory_bytes,{}", self.peak_memory_bytes());
        for e in self.loss_curves() {
            for (k, v) in &e.terms {
                let _ = writeln!(s, "{seed},{},loss_{k}_epoch_{},{v}", e.task + 1, e.epoch + 1);
            }
        }
        s
    }

    pub fn memory_trace_csv(&self) -> String {
        let mut s = String::from("step,bytes\n");
        for m in &self.memory_trace {
            let _ = writeln!(s, "{},{}", m.event, m.bytes);
        }
        s
    }

    /// One row per training step; inactive terms are left blank.
    pub fn losses_csv(&self) -> String {
        let mut s = String::from("task,epoch,step,total,task_loss,comp,replay,ewc,distill\n");
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
        for l in &self.losses {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                l.task + 1,
                l.epoch + 1,
                l.step,
                l.total(),
                l.task_loss,
                l.comp,
                opt(l.replay),
                opt(l.ewc),
                opt(l.distill)
            );
        }
        s
    }
}
