//! Built-in example programs and a seeded random program generator.
//!
//! Generated programs always terminate sequentially without faults: every
//! backward branch closes a counted loop on `r10`/`r11`, and every memory
//! operand is based on `r0` (always zero), `r9` (set once) or `r10`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::isa::{parse_program, Program};

/// `(name, source)` of every built-in program.
pub const BUILTIN: [(&str, &str); 7] = [
    ("fig5", include_str!("../corpus/fig5.prophet")),
    ("raw_violation", include_str!("../corpus/raw_violation.prophet")),
    ("loop_independent", include_str!("../corpus/loop_independent.prophet")),
    ("loop_carried", include_str!("../corpus/loop_carried.prophet")),
    ("nested_spawn", include_str!("../corpus/nested_spawn.prophet")),
    ("squash_instr", include_str!("../corpus/squash_instr.prophet")),
    ("mispredict", include_str!("../corpus/mispredict.prophet")),
];

pub fn source(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load(name: &str) -> Option<Program> {
    source(name).map(|s| parse_program(s).expect("built-in programs are valid"))
}

/// Upper bound on generated program length.
pub const MAX_GENERATED_LEN: usize = 200;

const DATA_REGS: [u8; 12] = [1, 2, 3, 4, 5, 6, 7, 8, 12, 13, 14, 15];

struct Gen {
    rng: ChaCha8Rng,
    lines: Vec<String>,
    /// Instruction count (labels excluded).
    len: usize,
    /// Straight-line instructions since the last label or branch.
    tail: Vec<String>,
    next_label: usize,
    in_loop: bool,
}

impl Gen {
    fn emit(&mut self, instr: String) {
        self.lines.push(format!("    {instr}"));
        self.len += 1;
    }

    fn op(&mut self, instr: String) {
        self.tail.push(instr.clone());
        self.emit(instr);
    }

    fn label(&mut self, name: &str) {
        self.lines.push(format!("{name}:"));
        self.tail.clear();
    }

    fn fresh(&mut self, prefix: &str) -> String {
        self.next_label += 1;
        format!("{prefix}{}", self.next_label)
    }

    fn reg(&mut self) -> String {
        format!("r{}", DATA_REGS.choose(&mut self.rng).expect("non-empty"))
    }

    fn operand(&mut self) -> String {
        let k = self.rng.gen_range(0..16);
        match self.rng.gen_range(0..4) {
            0 | 1 => format!("[r0+{k}]"),
            2 if self.in_loop => format!("[r10+{k}]"),
            _ => format!("[r9+{k}]"),
        }
    }

    fn data_op(&mut self) -> String {
        let rd = self.reg();
        match self.rng.gen_range(0..10) {
            0 => format!("li {rd}, {}", self.rng.gen_range(-20..40)),
            1 => format!("mov {rd}, {}", self.reg()),
            2 => format!("add {rd}, {}, {}", self.reg(), self.reg()),
            3 => format!("sub {rd}, {}, {}", self.reg(), self.reg()),
            4 => format!("mul {rd}, {}, {}", self.reg(), self.reg()),
            5 => format!("addi {rd}, {}, {}", self.reg(), self.rng.gen_range(-5..6)),
            6 | 7 => format!("ld {rd}, {}", self.operand()),
            _ => format!("st {}, {}", self.reg(), self.operand()),
        }
    }

    /// Straight-line run, optionally with a forward branch over part of it.
    fn straight(&mut self) {
        let n = self.rng.gen_range(2..7);
        let skip = self.rng.gen_bool(0.3).then(|| self.rng.gen_range(1..n));
        let target = self.fresh("f");
        for i in 0..n {
            if Some(i) == skip {
                let op = ["beq", "bne", "blt"].choose(&mut self.rng).expect("non-empty");
                let (a, b) = (self.reg(), self.reg());
                self.emit(format!("{op} {a}, {b}, {target}"));
                self.tail.clear();
            }
            let instr = self.data_op();
            self.op(instr);
        }
        if skip.is_some() {
            self.label(&target);
        }
    }

    /// Halts early when two registers happen to be equal.
    fn early_halt(&mut self) {
        let skip = self.fresh("h");
        let (a, b) = (self.reg(), self.reg());
        self.emit(format!("bne {a}, {b}, {skip}"));
        self.emit("halt".to_string());
        self.label(&skip);
    }

    /// P-slice predicting the state at a thread start from the preceding
    /// straight-line code, sometimes perturbed.
    fn pslice_from_tail(&mut self) -> Vec<String> {
        let keep = self.rng.gen_range(0..=3.min(self.tail.len()));
        let mut ps: Vec<String> = self.tail[self.tail.len() - keep..].to_vec();
        if self.rng.gen_bool(0.25) {
            let rd = self.reg();
            ps.push(format!("li {rd}, {}", self.rng.gen_range(-3..4)));
        }
        if self.rng.gen_bool(0.15) && !ps.is_empty() {
            let i = self.rng.gen_range(0..ps.len());
            ps[i] = self.data_op();
        }
        ps
    }

    fn thread_start(&mut self, label: &str, pslice: Vec<String>) {
        self.label(label);
        self.emit(format!("cqip {label}"));
        self.emit(format!("pslice_entry {label}"));
        for instr in pslice {
            self.emit(instr);
        }
        self.emit(format!("pslice_exit {label}"));
        self.tail.clear();
    }

    /// A counted loop whose head is a thread start, each iteration spawning
    /// the next.
    fn loop_region(&mut self, label: &str, later: &[String]) {
        let n = self.rng.gen_range(2..6);
        self.op("li r10, 0".to_string());
        self.op(format!("li r11, {n}"));
        let step = if self.rng.gen_bool(0.85) { 1 } else { 2 };
        self.thread_start(label, vec![format!("addi r10, r10, {step}")]);
        self.in_loop = true;
        if self.rng.gen_bool(0.8) {
            self.emit(format!("spawn {label}"));
        }
        for _ in 0..self.rng.gen_range(1..3) {
            self.straight();
        }
        if !later.is_empty() && self.rng.gen_bool(0.2) {
            let target = later.choose(&mut self.rng).expect("non-empty").clone();
            self.emit(format!("spawn {target}"));
        }
        self.op("addi r10, r10, 1".to_string());
        self.emit(format!("blt r10, r11, {label}"));
        self.tail.clear();
        self.in_loop = false;
    }
}

/// Source text of the generated program for `seed`.
pub fn generate_source(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let (text, len) = build(seed, rng.clone());
        if len <= MAX_GENERATED_LEN {
            return text;
        }
        rng = ChaCha8Rng::seed_from_u64(rng.gen());
    }
}

fn build(seed: u64, rng: ChaCha8Rng) -> (String, usize) {
    let mut g = Gen {
        rng,
        lines: vec![format!("# generated, seed {seed}")],
        len: 0,
        tail: Vec::new(),
        next_label: 0,
        in_loop: false,
    };
    let base = g.rng.gen_range(32..4096);
    g.emit(format!("li r9, {base}"));
    for _ in 0..g.rng.gen_range(2..6) {
        let rd = g.reg();
        let v = g.rng.gen_range(-10..30);
        g.op(format!("li {rd}, {v}"));
    }

    let regions = g.rng.gen_range(1..5);
    let labels: Vec<String> = (1..=regions).map(|i| format!("T{i}")).collect();
    let is_loop: Vec<bool> = (0..regions).map(|_| g.rng.gen_bool(0.3)).collect();
    // Per-region budget keeps the total under the length limit.
    let budget = (MAX_GENERATED_LEN - 40) / (regions + 1);

    for region in 0..=regions {
        let start = g.len;
        let later: Vec<String> = labels[region..].to_vec();
        if region > 0 && !is_loop[region - 1] {
            let ps = g.pslice_from_tail();
            g.thread_start(&labels[region - 1].clone(), ps);
        }
        let mut spawned = false;
        while g.len - start + 25 < budget.max(30) {
            match g.rng.gen_range(0..10) {
                0..=2 if !later.is_empty() && !spawned => {
                    let t = later.choose(&mut g.rng).expect("non-empty").clone();
                    g.emit(format!("spawn {t}"));
                    spawned = g.rng.gen_bool(0.6);
                }
                3 if !later.is_empty() => {
                    let t = later.choose(&mut g.rng).expect("non-empty").clone();
                    g.emit(format!("squash {t}"));
                }
                4 if g.rng.gen_bool(0.3) => g.early_halt(),
                _ => g.straight(),
            }
        }
        if region < regions && is_loop[region] {
            let rest: Vec<String> = labels[region + 1..].to_vec();
            g.loop_region(&labels[region].clone(), &rest);
        } else {
            g.straight();
        }
    }
    g.emit("halt".to_string());
    let mut text = g.lines.join("\n");
    text.push('\n');
    (text, g.len)
}

pub fn generate(seed: u64) -> Program {
    parse_program(&generate_source(seed)).expect("generated programs are valid")
}
