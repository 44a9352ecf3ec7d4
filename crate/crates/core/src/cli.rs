//! `tracemax` command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand};
use serde_json::json;

use crate::codec::{capacity, classify_foreign_options, hexdump, rs_drs_capacity, Ipv4Packet, OptionClass, OPTION_TYPE};
use crate::id_assignment::{assign_ids, min_feasible_bit_width, verify_assignment, BitWidth, IdAssignment};
use crate::reconstruction::{extract_option, parse_captures, reconstruct_from_capture, CaptureRecord};
use crate::simulator::{run_scenario, ScenarioFile};
use crate::topology::Topology;

#[derive(Debug, Parser)]
#[command(name = "tracemax", version, about = "Single-packet IP traceback toolkit")]
pub struct Cli {
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label every router port with an ID.
    Assign(AssignArgs),
    /// Check an assignment against its topology.
    Verify {
        topology: PathBuf,
        assignment: PathBuf,
    },
    /// How many hops one option records.
    Capacity {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=8))]
        bits: u8,
        /// Reserve the sender address field.
        #[arg(long)]
        sender: bool,
        /// Reserve the receiver address field.
        #[arg(long)]
        receiver: bool,
    },
    /// Capacity at every bit width next to full-address stamping.
    Compare,
    /// Run a scenario file.
    Simulate {
        scenario: PathBuf,
        /// Report destination.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Collector log destination, one JSON record per line.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Capture destination, `tick node dir hex` lines.
        #[arg(long)]
        captures: Option<PathBuf>,
    },
    /// Recover the path of every packet in a capture file.
    Reconstruct {
        capture: PathBuf,
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        assignment: PathBuf,
    },
    /// Decode the packets of a capture file.
    Inspect {
        capture: PathBuf,
        /// ID width used to decode trace options.
        #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u8).range(1..=8))]
        bits: u8,
    },
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("width").required(true).args(["bits", "auto"])))]
pub struct AssignArgs {
    pub topology: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=8))]
    pub bits: Option<u8>,
    /// Smallest width that fits the busiest node.
    #[arg(long)]
    pub auto: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_topology(path: &Path) -> Result<Topology> {
    Topology::from_json(&read(path)?).with_context(|| format!("loading {}", path.display()))
}

fn load_assignment(path: &Path, topology: &Topology) -> Result<IdAssignment> {
    IdAssignment::from_json(&read(path)?, topology).with_context(|| format!("loading {}", path.display()))
}

fn load_captures(path: &Path) -> Result<Vec<CaptureRecord>> {
    Ok(parse_captures(&read(path)?)?)
}

fn print_json(out: &mut dyn Write, value: &serde_json::Value) -> Result<()> {
    writeln!(out, "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Runs one invocation, writing results to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let json = cli.json;
    match cli.command {
        Command::Assign(a) => assign(a, json, out),
        Command::Verify { topology, assignment } => {
            let t = load_topology(&topology)?;
            let asg = load_assignment(&assignment, &t)?;
            let violations = verify_assignment(&t, &asg)?;
            if json {
                print_json(out, &json!({ "valid": violations.is_empty(), "ports": asg.len(), "bit_width": asg.bit_width().bits(), "violations": violations }))?;
            } else if violations.is_empty() {
                writeln!(out, "ok: {} ports, {}-bit ids", asg.len(), asg.bit_width().bits())?;
            } else {
                for v in &violations {
                    writeln!(out, "node {}: ports {} and {} both carry id {}", v.node, v.ports.0, v.ports.1, v.id)?;
                }
            }
            if !violations.is_empty() {
                bail!("{} uniqueness violations", violations.len());
            }
            Ok(())
        }
        Command::Capacity { bits, sender, receiver } => {
            let n = capacity(BitWidth::new(bits)?, sender, receiver);
            if json {
                print_json(out, &json!({ "bits": bits, "sender": sender, "receiver": receiver, "capacity": n, "rs_drs": rs_drs_capacity() }))?;
            } else {
                writeln!(out, "{n}")?;
                writeln!(out, "RS-DRS: {}", rs_drs_capacity())?;
            }
            Ok(())
        }
        Command::Compare => {
            let rows: Vec<_> = (1..=8u8)
                .map(|k| {
                    let w = BitWidth::new(k).expect("in range");
                    (k, capacity(w, false, false), capacity(w, true, false), capacity(w, true, true))
                })
                .collect();
            if json {
                let rows: Vec<_> = rows
                    .iter()
                    .map(|&(k, bare, s, sr)| json!({ "bits": k, "ids": bare, "with_sender": s, "with_both": sr }))
                    .collect();
                print_json(out, &json!({ "tracemax": rows, "rs_drs": rs_drs_capacity() }))?;
            } else {
                writeln!(out, "bits  ids  +sender  +both")?;
                for (k, bare, s, sr) in rows {
                    writeln!(out, "{k:>4} {bare:>4} {s:>8} {sr:>6}")?;
                }
                writeln!(out, "RS-DRS: {}", rs_drs_capacity())?;
            }
            Ok(())
        }
        Command::Simulate { scenario, out: report_path, log, captures } => {
            let config = ScenarioFile::load(&scenario)?;
            let outcome = run_scenario(&config)?;
            let report = outcome.report.to_json();
            if let Some(p) = &report_path {
                write(p, &format!("{report}\n"))?;
            }
            if let Some(p) = &log {
                write(p, &outcome.log.to_json_lines())?;
            }
            if let Some(p) = &captures {
                write(p, &outcome.captures_text())?;
            }
            if json {
                writeln!(out, "{report}")?;
                return Ok(());
            }
            let r = &outcome.report;
            let tick = |t: Option<u64>| t.map_or("never".to_string(), |t| t.to_string());
            writeln!(out, "attack onset: {}", tick(r.attack_onset_tick))?;
            writeln!(out, "detection: {}", tick(r.detection_tick))?;
            writeln!(out, "defense: {}", tick(r.defense_tick))?;
            writeln!(out, "distinct attackers: {}", r.distinct_attacker_count)?;
            for (i, t) in &r.traced_paths {
                writeln!(out, "attacker {i}: {}", t.path.arrow(&config.topology))?;
            }
            if let Some(rate) = r.attack_drop_rate {
                writeln!(out, "attack drop rate: {rate:.4}")?;
            }
            writeln!(out, "benign drop rate: {:.4}", r.benign_drop_rate)?;
            Ok(())
        }
        Command::Reconstruct { capture, topology, assignment } => {
            let t = load_topology(&topology)?;
            let asg = load_assignment(&assignment, &t)?;
            let records = load_captures(&capture)?;
            let mut failures = 0;
            let mut rows = Vec::new();
            for rec in &records {
                let node = rec.node.map_or("-".to_string(), |n| n.to_string());
                match reconstruct_from_capture(rec, &t, &asg) {
                    Ok(path) => {
                        if json {
                            rows.push(json!({ "tick": rec.tick, "node": rec.node, "dir": rec.dir, "path": path, "arrow": path.arrow(&t) }));
                        } else {
                            let state = if path.complete { "complete" } else { "partial" };
                            writeln!(out, "{} {} {}: {} ({state})", rec.tick, node, rec.dir, path.arrow(&t))?;
                        }
                    }
                    Err(e) => {
                        failures += 1;
                        if json {
                            rows.push(json!({ "tick": rec.tick, "node": rec.node, "dir": rec.dir, "error": e.to_string() }));
                        } else {
                            writeln!(out, "{} {} {}: error: {e}", rec.tick, node, rec.dir)?;
                        }
                    }
                }
            }
            if json {
                print_json(out, &serde_json::Value::Array(rows))?;
            }
            if failures > 0 {
                bail!("{failures} of {} packets could not be reconstructed", records.len());
            }
            Ok(())
        }
        Command::Inspect { capture, bits } => inspect(&load_captures(&capture)?, BitWidth::new(bits)?, json, out),
    }
}

fn assign(a: AssignArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    let t = load_topology(&a.topology)?;
    let bits = match a.bits {
        Some(b) => BitWidth::new(b)?,
        None => min_feasible_bit_width(&t),
    };
    let asg = assign_ids(&t, bits)?;
    let doc = asg.to_json();
    match &a.out {
        Some(p) => {
            write(p, &format!("{doc}\n"))?;
            if json {
                print_json(out, &json!({ "bit_width": bits.bits(), "ports": asg.len(), "out": p }))?;
            } else {
                writeln!(out, "assigned {} ports at {} bits to {}", asg.len(), bits.bits(), p.display())?;
            }
        }
        None => writeln!(out, "{doc}")?,
    }
    Ok(())
}

fn option_label(class: &Result<OptionClass, crate::codec::CodecError>) -> &'static str {
    match class {
        Ok(OptionClass::None) => "none",
        Ok(OptionClass::Tracemax) => "tracemax",
        Ok(OptionClass::LsrOrSsr) => "source-route",
        Ok(OptionClass::Other) => "other",
        Err(_) => "malformed",
    }
}

fn inspect(records: &[CaptureRecord], bits: BitWidth, json: bool, out: &mut dyn Write) -> Result<()> {
    // Only the bit width is needed to decode; an empty assignment carries it.
    let asg = IdAssignment::from_ids(bits, Default::default())?;
    let mut rows = Vec::new();
    let mut failures = 0;
    for rec in records {
        let node = rec.node.map_or("-".to_string(), |n| n.to_string());
        let packet = match Ipv4Packet::from_bytes(&rec.bytes) {
            Ok(p) => p,
            Err(e) => {
                failures += 1;
                if json {
                    rows.push(json!({ "tick": rec.tick, "node": rec.node, "dir": rec.dir, "error": e.to_string() }));
                } else {
                    writeln!(out, "{} {} {}: undecodable: {e}", rec.tick, node, rec.dir)?;
                }
                continue;
            }
        };
        let h = &packet.header;
        let opts = &h.options;
        let class = classify_foreign_options(opts);
        let label = if opts.first() == Some(&OPTION_TYPE) { "tracemax" } else { option_label(&class) };
        let decoded = if label == "tracemax" { extract_option(opts, &asg) } else { Ok(None) };
        if json {
            let mut row = json!({
                "tick": rec.tick, "node": rec.node, "dir": rec.dir,
                "src": h.src, "dst": h.dst, "protocol": h.protocol, "ttl": h.ttl,
                "total_length": h.total_length, "identification": h.identification,
                "checksum": format!("{:04x}", h.header_checksum),
                "payload_len": packet.payload.len(),
                "option": { "label": label, "hex": hex::encode(opts) },
            });
            match &decoded {
                Ok(Some(o)) => {
                    row["option"]["sender_ip"] = json!(o.sender_ip);
                    row["option"]["receiver_ip"] = json!(o.receiver_ip);
                    row["option"]["ids"] = json!(o.ids.iter().map(|i| i.0).collect::<Vec<_>>());
                }
                Ok(None) => {}
                Err(e) => row["option"]["error"] = json!(e.to_string()),
            }
            rows.push(row);
            continue;
        }
        writeln!(
            out,
            "{} {} {}: {} -> {} proto {} ttl {} len {} id {:#06x} csum {:#06x}",
            rec.tick, node, rec.dir, h.src, h.dst, h.protocol, h.ttl, h.total_length, h.identification, h.header_checksum
        )?;
        if opts.is_empty() {
            writeln!(out, "  option: none")?;
            continue;
        }
        writeln!(out, "  option: {label}")?;
        for line in hexdump(opts).lines() {
            writeln!(out, "    {line}")?;
        }
        match decoded {
            Ok(Some(o)) => {
                if let Some(ip) = o.sender_ip {
                    writeln!(out, "  sender: {ip}")?;
                }
                if let Some(ip) = o.receiver_ip {
                    writeln!(out, "  receiver: {ip}")?;
                }
                let ids: Vec<String> = o.ids.iter().map(|i| i.0.to_string()).collect();
                writeln!(out, "  ids ({}): [{}]", ids.len(), ids.join(", "))?;
            }
            Ok(None) => {}
            Err(e) => writeln!(out, "  undecodable: {e}")?,
        }
    }
    if json {
        print_json(out, &serde_json::Value::Array(rows))?;
    }
    if failures > 0 {
        bail!("{failures} undecodable packets");
    }
    Ok(())
}
