use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use ca_atlas::metricspace::{self, Neighbour, Projection, VectorStore};
use ca_atlas::rules::{dim_labels, Half, Transition, RULE_COUNT};
use ca_atlas::sweep::{run_sweep, Shard, SweepOutcome, SweepSpec};
use ca_atlas::{
    classify, estimate_vector, parse_rule, BehaviourVector, PlanKind, Rule, RuleId, SeedRecipe,
};

use crate::args::{Cli, Command, Format, Global};
use crate::table::{num, Table};
use crate::CliError;

type Out = BufWriter<Box<dyn Write>>;

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Vector { rule } => vector(g, rule),
        Command::Sweep {
            from,
            to,
            rule_file,
            batch,
        } => sweep(g, *from, *to, rule_file.as_deref(), *batch),
        Command::Near { target, k } => near(g, target, *k),
        Command::Dist { a, b, boolean } => dist(g, a, b, *boolean),
        Command::Curve {
            target,
            max_rank,
            output,
        } => curve(g, target, *max_rank, output.as_deref()),
        Command::Hybrid { a, b, k } => hybrid(g, a, b, *k),
        Command::Opposite { target } => opposite(g, target),
        Command::Centroid { members } => centroid(g, members),
        Command::Unique { k } => unique(g, *k),
        Command::Cluster {
            k,
            max_iters,
            output,
        } => cluster(g, *k, *max_iters, output.as_deref()),
        Command::Project { dims, pca, output } => project(g, *dims, *pca, output.as_deref()),
        Command::Export { output } => export(g, output.as_deref()),
        Command::Merge { inputs, output } => merge(inputs, output),
    }
}

/// Accepts `Bx/Sy` notation or a decimal rule id.
fn rule_arg(text: &str) -> Result<Rule, CliError> {
    if !text.is_empty() && text.bytes().all(|b| b.is_ascii_digit()) {
        let value = text.parse::<u32>().unwrap_or(u32::MAX);
        return RuleId::new(value)
            .map(RuleId::rule)
            .map_err(|source| CliError::RuleId {
                text: text.to_string(),
                source,
            });
    }
    parse_rule(text.trim()).map_err(|source| CliError::Rule {
        text: text.to_string(),
        source,
    })
}

fn open_store(g: &Global) -> Result<VectorStore, CliError> {
    let path = g.store.as_ref().ok_or(CliError::NoStore)?;
    VectorStore::read_file(path).map_err(|source| CliError::Store {
        path: path.clone(),
        source,
    })
}

fn stored(store: &VectorStore, text: &str) -> Result<RuleId, CliError> {
    let rule = rule_arg(text)?;
    if store.contains(rule.id()) {
        Ok(rule.id())
    } else {
        Err(CliError::NotInStore(rule))
    }
}

fn stdout() -> Out {
    BufWriter::new(Box::new(io::stdout().lock()))
}

fn output_to(path: Option<&Path>) -> Result<Out, CliError> {
    Ok(match path {
        Some(p) => BufWriter::new(Box::new(File::create(p)?)),
        None => stdout(),
    })
}

fn change(rule: RuleId) -> String {
    let text = classify(rule.rule()).change_description();
    if text.is_empty() {
        "-".to_string()
    } else {
        text.replace(", ", "; ")
    }
}

fn vector(g: &Global, text: &str) -> Result<(), CliError> {
    let rule = rule_arg(text)?;
    let plan = classify(rule);
    let params = g.params();
    let v = estimate_vector(&plan, &params, &SeedRecipe::new(g.seed))?;
    let mut w = stdout();

    if g.format == Format::Csv {
        writeln!(w, "rule,{}", dim_labels().join(","))?;
        let values: Vec<String> = v.0.iter().map(|x| format!("{x:.6}")).collect();
        writeln!(w, "{rule},{}", values.join(","))?;
        return Ok(w.flush()?);
    }

    writeln!(w, "rule       {rule}  (id {})", rule.id().value())?;
    match plan.kind {
        PlanKind::Plain { .. } => writeln!(w, "emulation  none")?,
        PlanKind::AntiInfinity { run } => writeln!(w, "emulation  anti-infinity, runs {run}")?,
        PlanKind::Strobing { even, odd } => {
            writeln!(w, "emulation  strobing, even steps {even}, odd steps {odd}")?
        }
    }
    writeln!(
        w,
        "soups      {} trials, {} samples each, seed {}",
        params.num_trials, params.num_samples, g.seed
    )?;
    if plan.is_strobing() {
        write_half(&mut w, "even half", &v, Half::Even)?;
        write_half(&mut w, "odd half", &v, Half::Odd)?;
    } else {
        write_half(&mut w, "both halves", &v, Half::Even)?;
    }
    Ok(w.flush()?)
}

fn write_half(w: &mut Out, title: &str, v: &BehaviourVector, half: Half) -> io::Result<()> {
    writeln!(w)?;
    writeln!(w, "{title}")?;
    write!(w, " ")?;
    for n in 0..=8 {
        write!(w, "{n:>8}")?;
    }
    writeln!(w)?;
    for t in Transition::ALL {
        write!(w, "{}", t.letter())?;
        for n in 0..=8 {
            write!(w, "{:>8}", num(v.get(half, t, n)))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn read_rule_file(path: &Path) -> Result<Vec<RuleId>, CliError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| rule_arg(l).map(Rule::id))
        .collect()
}

fn sweep(
    g: &Global,
    from: u32,
    to: u32,
    rule_file: Option<&Path>,
    batch: usize,
) -> Result<(), CliError> {
    let output = g.store.clone().ok_or(CliError::NoStore)?;
    let ids = match rule_file {
        Some(path) => read_rule_file(path)?,
        None => {
            if from >= to || to > RULE_COUNT {
                return Err(CliError::Usage(format!(
                    "id range {from}..{to} must be non-empty and end at most at {RULE_COUNT}"
                )));
            }
            (from..to).map(|v| RuleId::new(v).unwrap()).collect()
        }
    };
    let mut spec = SweepSpec::new(ids, output, g.params(), g.seed);
    spec.shard = g.shard.unwrap_or(Shard::WHOLE);
    spec.jobs = g.jobs();
    spec.checkpoint = g.checkpoint.clone();
    spec.batch = batch.max(1);

    let outcome = run_sweep(&spec, |p| {
        eprint!("\rswept {}/{} rules", p.done, p.total);
        ControlFlow::Continue(())
    })?;
    eprintln!();
    if let SweepOutcome::Completed { computed, resumed } = outcome {
        println!(
            "computed {computed} rules, {resumed} already present; wrote {}",
            spec.output.display()
        );
    }
    Ok(())
}

fn near(g: &Global, target: &str, k: usize) -> Result<(), CliError> {
    let store = open_store(g)?;
    let target = stored(&store, target)?;
    let found = metricspace::nearest_to_rule(&store, target, k)?;

    let mut table = Table::new(&[
        "rank",
        "rule",
        "rule_change",
        "duplicate",
        "real",
        "boolean",
    ]);
    for n in &found {
        let dup = match classify(n.rule.rule()).duplicate() {
            Some(other) if store.contains(other.id()) => {
                let r = metricspace::rank_of(&store, target, other.id())?;
                format!("{} & {}", n.rank.min(r), n.rank.max(r))
            }
            _ => "-".to_string(),
        };
        table.push(vec![
            n.rank.to_string(),
            n.rule.rule().to_string(),
            change(n.rule),
            dup,
            num(n.real_distance),
            num(n.boolean_distance.unwrap_or(f64::NAN)),
        ]);
    }
    let mut w = stdout();
    table.write(&mut w, g.format)?;
    Ok(w.flush()?)
}

fn dist(g: &Global, a: &str, b: &str, boolean: bool) -> Result<(), CliError> {
    let d = if boolean {
        metricspace::boolean_distance(rule_arg(a)?, rule_arg(b)?)
    } else {
        let store = open_store(g)?;
        let (a, b) = (stored(&store, a)?, stored(&store, b)?);
        metricspace::real_distance(&store.get(a).unwrap(), &store.get(b).unwrap())
    };
    println!("{}", num(d));
    Ok(())
}

fn curve(g: &Global, target: &str, max_rank: usize, output: Option<&Path>) -> Result<(), CliError> {
    let store = open_store(g)?;
    let target = stored(&store, target)?;
    let points = metricspace::rank_curve(&store, target, max_rank)?;
    let mut table = Table::new(&["rank", "distance"]);
    for (rank, d) in points {
        table.push(vec![rank.to_string(), num(d)]);
    }
    let mut w = output_to(output)?;
    table.write(&mut w, g.format)?;
    Ok(w.flush()?)
}

fn hybrid(g: &Global, a: &str, b: &str, k: usize) -> Result<(), CliError> {
    let store = open_store(g)?;
    let (a, b) = (stored(&store, a)?, stored(&store, b)?);
    let found = metricspace::hybrid(&store, a, b, k)?;
    let mut table = Table::new(&[
        "rank",
        "rule",
        "rule_change",
        "real",
        "boolean_a",
        "boolean_b",
    ]);
    for n in &found {
        table.push(vec![
            n.rank.to_string(),
            n.rule.rule().to_string(),
            change(n.rule),
            num(n.real_distance),
            num(metricspace::boolean_distance(a.rule(), n.rule.rule())),
            num(metricspace::boolean_distance(b.rule(), n.rule.rule())),
        ]);
    }
    let mut w = stdout();
    table.write(&mut w, g.format)?;
    Ok(w.flush()?)
}

fn opposite(g: &Global, target: &str) -> Result<(), CliError> {
    let store = open_store(g)?;
    let target = stored(&store, target)?;
    let Neighbour {
        rule,
        real_distance,
        boolean_distance,
        rank,
    } = metricspace::opposite(&store, target)?;
    let mut table = Table::new(&[
        "target",
        "opposite",
        "rule_change",
        "real",
        "boolean",
        "rank",
        "of",
    ]);
    table.push(vec![
        target.rule().to_string(),
        rule.rule().to_string(),
        change(rule),
        num(real_distance),
        num(boolean_distance.unwrap_or(f64::NAN)),
        rank.to_string(),
        store.len().to_string(),
    ]);
    let mut w = stdout();
    table.write(&mut w, g.format)?;
    Ok(w.flush()?)
}

fn centroid(g: &Global, members: &[String]) -> Result<(), CliError> {
    let store = open_store(g)?;
    let ids = members
        .iter()
        .map(|m| stored(&store, m))
        .collect::<Result<Vec<_>, _>>()?;
    let c = metricspace::centroid(&store, &ids)?;
    let mut w = stdout();
    if g.format == Format::Csv {
        writeln!(w, "nearest,distance,{}", dim_labels().join(","))?;
        let values: Vec<String> = c.vector.0.iter().map(|x| format!("{x:.6}")).collect();
        writeln!(
            w,
            "{},{},{}",
            c.nearest.rule(),
            num(c.distance),
            values.join(",")
        )?;
    } else {
        writeln!(w, "members    {}", ids.len())?;
        writeln!(
            w,
            "nearest    {}  (distance {})",
            c.nearest.rule(),
            num(c.distance)
        )?;
        write_half(&mut w, "mean, even half", &c.vector, Half::Even)?;
        write_half(&mut w, "mean, odd half", &c.vector, Half::Odd)?;
    }
    Ok(w.flush()?)
}

fn unique(g: &Global, k: usize) -> Result<(), CliError> {
    let store = open_store(g)?;
    let found = metricspace::idiosyncrasy(&store, k, |done, total| {
        eprint!("\rscanned {done}/{total} rules");
    })?;
    eprintln!();
    let mut table = Table::new(&["rank", "rule", "rule_change", "nearest_distance"]);
    for (i, (id, d)) in found.iter().enumerate() {
        table.push(vec![
            (i + 1).to_string(),
            id.rule().to_string(),
            change(*id),
            num(*d),
        ]);
    }
    let mut w = stdout();
    table.write(&mut w, g.format)?;
    Ok(w.flush()?)
}

fn cluster(g: &Global, k: usize, max_iters: usize, output: Option<&Path>) -> Result<(), CliError> {
    let store = open_store(g)?;
    let c = metricspace::cluster(&store, k, max_iters, g.seed)?;
    eprintln!(
        "{} after {} iterations, objective {:.6}",
        if c.converged { "converged" } else { "stopped" },
        c.objective.len(),
        c.final_objective()
    );
    for i in 0..k {
        eprintln!("cluster {i}: {} rules", c.members(i).len());
    }
    let mut table = Table::new(&["rule", "cluster"]);
    for (id, cl) in &c.assignments {
        table.push(vec![id.rule().to_string(), cl.to_string()]);
    }
    let mut w = output_to(output)?;
    table.write(&mut w, g.format)?;
    Ok(w.flush()?)
}

fn project(
    g: &Global,
    dims: Option<(usize, usize)>,
    pca: bool,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let mode = match (dims, pca) {
        (_, true) => Projection::Pca2 { seed: g.seed },
        (Some((a, b)), false) => Projection::Coordinates(a, b),
        _ => return Err(CliError::Usage("pass --dims a,b or --pca".to_string())),
    };
    let store = open_store(g)?;
    let points = metricspace::project2d(&store, mode)?;
    let mut table = Table::new(&["rule", "x", "y"]);
    for (id, x, y) in points {
        table.push(vec![
            id.rule().to_string(),
            format!("{x:.6}"),
            format!("{y:.6}"),
        ]);
    }
    let mut w = output_to(output)?;
    table.write(&mut w, g.format)?;
    Ok(w.flush()?)
}

fn export(g: &Global, output: Option<&Path>) -> Result<(), CliError> {
    let store = open_store(g)?;
    let mut w = output_to(output)?;
    store.export_csv(&mut w)?;
    Ok(w.flush()?)
}

fn merge(inputs: &[PathBuf], output: &Path) -> Result<(), CliError> {
    let mut merged: Option<VectorStore> = None;
    for path in inputs {
        let store = VectorStore::read_file(path).map_err(|source| CliError::Store {
            path: path.clone(),
            source,
        })?;
        merged = Some(match merged {
            None => store,
            Some(acc) => acc.merge(&store).map_err(|source| CliError::Store {
                path: path.clone(),
                source,
            })?,
        });
    }
    let merged = merged.expect("clap requires at least one input");
    merged
        .write_file(output)
        .map_err(|source| CliError::Write {
            path: output.to_path_buf(),
            source,
        })?;
    println!("merged {} rules into {}", merged.len(), output.display());
    Ok(())
}
