//! A scripted reader study against the HTTP service: two readers work
//! through ten cases (one blind, one assisted), then the admin summary
//! compares their per-class recognition rates with the model's.
//!
//! To run the service on its own instead:
//!
//! ```text
//! ADMIN_TOKEN=secret fetalcns serve --port 8080 --data-dir study --cases cases.jsonl
//! ```

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};

use fetalcns::corpus::AnomalyLabel;
use fetalcns::pipeline::{serve_in_background, ServeOptions};
use fetalcns::reader::{write_cases, Case, StudySummary};
use fetalcns::synth::{generate, SynthConfig};

fn http(addr: SocketAddr, method: &str, path: &str, body: Option<&str>, token: Option<&str>) -> (u16, String) {
    let mut stream = TcpStream::connect(addr).expect("connect");
    let mut req = format!("{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n");
    if let Some(t) = token {
        req.push_str(&format!("Authorization: Bearer {t}\r\n"));
    }
    let body = body.unwrap_or("");
    req.push_str(&format!(
        "Content-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    ));
    stream.write_all(req.as_bytes()).expect("send");
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw).expect("read");
    let text = String::from_utf8_lossy(&raw);
    let status = text[9..12].parse().expect("status code");
    let body = text
        .split_once("\r\n\r\n")
        .map(|(_, b)| b.to_string())
        .unwrap_or_default();
    (status, body)
}

fn main() -> fetalcns::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let manifest = generate(
        &SynthConfig {
            patients: 10,
            images_per_patient: 1,
            width: 48,
            height: 48,
            ..SynthConfig::default()
        },
        dir.path(),
    )?;
    // Scores peaked on the true class, except that every Normal case is
    // mistaken for Holoprosencephaly.
    let cases: Vec<Case> = manifest
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let predicted = if r.label == AnomalyLabel::Normal {
                AnomalyLabel::Holoprosencephaly
            } else {
                r.label
            };
            let mut p = vec![0.05; 5];
            p[predicted.index()] = 0.8;
            Case {
                case_id: format!("case{i:02}"),
                sample_id: r.sample_id.clone(),
                image: r.path.clone(),
                true_label: r.label,
                model_probabilities: p,
                overlay: None,
            }
        })
        .collect();
    let cases_path = dir.path().join("cases.jsonl");
    write_cases(&cases_path, &cases)?;
    let data_dir = dir.path().join("study");
    std::fs::create_dir_all(&data_dir).expect("data dir");
    std::fs::write(data_dir.join("readers.json"), r#"["radiologist-a", "radiologist-b"]"#).expect("readers");

    let server = serve_in_background(&ServeOptions {
        port: 0,
        data_dir,
        cases: cases_path,
        admin_token: Some("secret".into()),
    })?;
    let addr = server.addr();
    println!("serving on {addr}");

    for (reader, mode) in [("radiologist-a", "blind"), ("radiologist-b", "assisted")] {
        let mut answered = 0;
        loop {
            let (status, body) = http(
                addr,
                "GET",
                &format!("/api/cases/next?reader={reader}&mode={mode}"),
                None,
                None,
            );
            if status == 204 {
                break;
            }
            let view: serde_json::Value = serde_json::from_str(&body)?;
            let case_id = view["case_id"].as_str().expect("case id");
            // reader A always answers Normal; reader B follows the model
            let chosen = match view.get("model_probabilities") {
                Some(scores) => {
                    let best = scores
                        .as_array()
                        .expect("scores")
                        .iter()
                        .max_by(|a, b| {
                            a["probability"]
                                .as_f64()
                                .partial_cmp(&b["probability"].as_f64())
                                .unwrap()
                        })
                        .expect("non-empty");
                    best["label"].as_str().expect("label").to_string()
                }
                None => "Normal".to_string(),
            };
            let body =
                format!(r#"{{"reader_id":"{reader}","chosen_label":"{chosen}","mode":"{mode}","elapsed_ms":1500}}"#);
            let (status, _) = http(
                addr,
                "POST",
                &format!("/api/cases/{case_id}/responses"),
                Some(&body),
                None,
            );
            assert_eq!(status, 201);
            answered += 1;
        }
        println!("{reader} ({mode}) answered {answered} cases");
    }

    let (status, _) = http(addr, "GET", "/api/summary", None, None);
    println!("summary without token -> {status}");
    let (_, body) = http(addr, "GET", "/api/summary", None, Some("secret"));
    let summary: StudySummary = serde_json::from_str(&body)?;
    for p in summary.readers.iter().chain(std::iter::once(&summary.model)) {
        let rates: Vec<String> = p
            .per_class
            .iter()
            .map(|c| match c.rate {
                Some(r) => format!("{}={:.2}", c.label, r),
                None => format!("{}=n/a", c.label),
            })
            .collect();
        println!("{:<14} {}", p.participant, rates.join(" "));
    }
    server.shutdown()
}
