//! Shared fixtures for the CLI and acceptance suites.
#![allow(dead_code)] // each test target uses a different subset

use msquid_core::pcap::{write_pcap, PcapWriteOptions, RawPacket, LINKTYPE_ETHERNET};
use std::path::Path;
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_msquid");

/// Run the msquid binary with the given arguments.
pub fn msquid(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("MSQUID_SEED")
        .output()
        .expect("binary runs")
}

pub fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process exited normally")
}

pub fn stdout_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Ethernet/IPv4/UDP frame around the payload.
pub fn udp_frame(payload: &[u8]) -> Vec<u8> {
    let mut udp = Vec::with_capacity(8 + payload.len());
    udp.extend_from_slice(&1234u16.to_be_bytes());
    udp.extend_from_slice(&5678u16.to_be_bytes());
    udp.extend_from_slice(&((8 + payload.len()) as u16).to_be_bytes());
    udp.extend_from_slice(&[0, 0]);
    udp.extend_from_slice(payload);

    let total = 20 + udp.len();
    let mut ip = vec![0x45, 0x00];
    ip.extend_from_slice(&(total as u16).to_be_bytes());
    ip.extend_from_slice(&[0, 0, 0, 0]);
    ip.push(64);
    ip.push(17);
    ip.extend_from_slice(&[0, 0]);
    ip.extend_from_slice(&[10, 0, 0, 1, 10, 0, 0, 2]);
    ip.extend_from_slice(&udp);

    let mut frame = vec![0u8; 12];
    frame.extend_from_slice(&0x0800u16.to_be_bytes());
    frame.extend_from_slice(&ip);
    frame
}

pub fn packet_at(ts: f64, frame: Vec<u8>) -> RawPacket {
    RawPacket {
        ts_sec: ts as u32,
        ts_frac: ((ts.fract()) * 1e6).round() as u32,
        ts_nanos: false,
        captured_len: frame.len() as u32,
        original_len: frame.len() as u32,
        data: frame,
        link_type: LINKTYPE_ETHERNET,
    }
}

/// Write a little-endian microsecond pcap of Ethernet/IPv4/UDP packets
/// carrying the given payloads at the given timestamps.
pub fn write_udp_pcap(path: &Path, payloads: &[(f64, &[u8])]) {
    let packets: Vec<RawPacket> = payloads
        .iter()
        .map(|(ts, payload)| packet_at(*ts, udp_frame(payload)))
        .collect();
    std::fs::write(path, write_pcap(&packets, &PcapWriteOptions::default())).unwrap();
}
