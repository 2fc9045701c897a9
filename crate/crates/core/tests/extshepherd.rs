use std::io::BufReader;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use psyphy_core::extshepherd::{serve, Endpoint, ExternalShepherd, ShepherdSession};
use psyphy_core::io::{encode_png8, load_dataset};
use psyphy_core::{Error, Identity, IdentitySet, ImageBuffer, Matcher, Shepherd};

fn stub(name: &str) -> Endpoint {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../conformance")
        .join(name);
    Endpoint::Command {
        program: "sh".into(),
        args: vec![path.display().to_string()],
    }
}

fn paths(n: usize) -> Vec<PathBuf> {
    (0..n).map(|i| PathBuf::from(format!("/nonexistent/{i}.png"))).collect()
}

fn session(name: &str) -> ShepherdSession {
    ShepherdSession::connect(&stub(name), Duration::from_secs(10)).unwrap()
}

fn protocol_message(err: &Error) -> String {
    match err.root() {
        Error::Protocol(m) => m.clone(),
        other => panic!("expected a protocol error, got {other}"),
    }
}

#[test]
fn conforming_stub_gives_a_one_by_one_matrix() {
    let mut s = session("identity.sh");
    assert_eq!(s.peer().name, "identity");
    let m = s.remote_similarity(&paths(1), &paths(1)).unwrap();
    assert_eq!((m.rows(), m.cols()), (1, 1));
    assert_eq!(m.get(0, 0), 1.0);
    // The session stays usable for another request.
    assert_eq!(s.remote_similarity(&paths(1), &paths(1)).unwrap().get(0, 0), 1.0);
}

#[test]
fn stalling_peer_times_out_naming_the_row() {
    let mut s = ShepherdSession::connect(&stub("stall.sh"), Duration::from_millis(300)).unwrap();
    let started = std::time::Instant::now();
    let err = s.remote_similarity(&paths(1), &paths(1)).unwrap_err();
    assert!(started.elapsed() < Duration::from_secs(5));
    assert!(
        matches!(err.root(), Error::Timeout(d) if *d == Duration::from_millis(300)),
        "{err}"
    );
    assert!(err.to_string().contains("waiting for row 0"), "{err}");
}

#[test]
fn out_of_range_value_names_row_and_column() {
    let err = session("bad_range.sh")
        .remote_similarity(&paths(1), &paths(1))
        .unwrap_err();
    assert_eq!(protocol_message(&err), "row 0, col 0: value 1.5 outside [0, 1]");
}

#[test]
fn short_row_is_rejected() {
    let err = session("short_row.sh")
        .remote_similarity(&paths(1), &paths(2))
        .unwrap_err();
    assert_eq!(protocol_message(&err), "row 0 has 1 values, expected 2");
}

#[test]
fn missing_row_is_named() {
    let err = session("missing_row.sh")
        .remote_similarity(&paths(2), &paths(1))
        .unwrap_err();
    assert_eq!(protocol_message(&err), "done received but row 1 missing");
}

#[test]
fn duplicate_row_is_named() {
    let err = session("duplicate_row.sh")
        .remote_similarity(&paths(2), &paths(1))
        .unwrap_err();
    assert_eq!(protocol_message(&err), "duplicate row 0");
}

#[test]
fn early_termination_is_named() {
    let err = session("early_exit.sh")
        .remote_similarity(&paths(2), &paths(1))
        .unwrap_err();
    assert_eq!(
        protocol_message(&err),
        "peer closed the stream after 1 of 2 rows; row 1 missing"
    );
}

#[test]
fn version_two_is_a_mismatch() {
    let err = match ShepherdSession::connect(&stub("version2.sh"), Duration::from_secs(10)) {
        Ok(_) => panic!("handshake with a version 2 peer succeeded"),
        Err(e) => e,
    };
    assert!(
        matches!(err.root(), Error::VersionMismatch { expected: 1, actual: 2 }),
        "{err}"
    );
    assert!(err.to_string().contains("version2.sh"), "{err}");
}

#[test]
fn missing_program_fails_to_connect() {
    let endpoint = Endpoint::command_line("/nonexistent/shepherd --flag").unwrap();
    assert!(ShepherdSession::connect(&endpoint, Duration::from_secs(1)).is_err());
}

fn blob_images(dir: &Path, n: usize) -> IdentitySet {
    for i in 0..n {
        let cx = 4.0 + (i % 5) as f64 * 6.0;
        let cy = 4.0 + (i / 5) as f64 * 9.0;
        let img = ImageBuffer::from_fn(32, 32, |x, y| {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            (-d2 / 18.0).exp() * 0.9 + 0.05
        })
        .unwrap();
        encode_png8(&img, &dir.join(format!("id{i:02}.png"))).unwrap();
    }
    load_dataset(dir).unwrap()
}

/// Serves the pixel matcher on a loopback port, one thread per connection.
fn spawn_tcp_peer(matcher: Matcher) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let address = listener.local_addr().unwrap().to_string();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let stream = stream.unwrap();
            let matcher = matcher.clone();
            std::thread::spawn(move || {
                let reader = BufReader::new(stream.try_clone().unwrap());
                let _ = serve(reader, stream, &matcher);
            });
        }
    });
    address
}

#[test]
fn tcp_peer_matches_the_in_process_pixel_matcher() {
    let dir = tempfile::tempdir().unwrap();
    let set = blob_images(dir.path(), 10);
    let matcher = Matcher::pixels(32);
    let address = spawn_tcp_peer(matcher.clone());
    let remote = ExternalShepherd::connect(Endpoint::Tcp { address }, Duration::from_secs(10)).unwrap();
    assert_eq!(remote.name(), "psyphy-pixels");

    let local = matcher.similarity(&set, &set).unwrap();
    let served = remote.similarity(&set, &set).unwrap();
    assert_eq!((served.rows(), served.cols()), (10, 10));
    for (a, b) in local.values().iter().zip(served.values()) {
        assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }
}

#[test]
fn unsourced_probes_are_materialized_for_the_peer() {
    let dir = tempfile::tempdir().unwrap();
    let set = blob_images(dir.path(), 6);
    let probes = IdentitySet::new(
        set.iter()
            .map(|m| Identity::new(m.id(), m.image().map(|v| v * 0.8)))
            .collect(),
    )
    .unwrap();
    let matcher = Matcher::pixels(32);
    let address = spawn_tcp_peer(matcher.clone());
    let remote = ExternalShepherd::connect(Endpoint::Tcp { address }, Duration::from_secs(10)).unwrap();
    let local = matcher.similarity(&probes, &set).unwrap();
    let served = remote.similarity(&probes, &set).unwrap();
    // Probes travel as 16-bit PNG, so agreement is up to quantization.
    for (a, b) in local.values().iter().zip(served.values()) {
        assert!((a - b).abs() <= 1e-4, "{a} vs {b}");
    }
}

#[test]
fn child_process_shepherd_reports_protocol_errors_through_the_trait() {
    let dir = tempfile::tempdir().unwrap();
    let set = blob_images(dir.path(), 1);
    let remote = ExternalShepherd::connect(stub("bad_range.sh"), Duration::from_secs(10)).unwrap();
    let err = remote.similarity(&set, &set).unwrap_err();
    assert!(err.to_string().contains("row 0, col 0"), "{err}");
}

#[test]
fn serve_rejects_other_versions_and_unknown_ops() {
    let mut out = Vec::new();
    let input = b"{\"op\":\"hello\",\"version\":2}\n";
    assert!(serve(&input[..], &mut out, &Matcher::pixels(8)).is_err());
    assert!(String::from_utf8(out).unwrap().contains("\"op\":\"error\""));

    let mut out = Vec::new();
    let input = b"{\"op\":\"hello\",\"version\":1}\n{\"op\":\"dance\"}\n";
    assert!(serve(&input[..], &mut out, &Matcher::pixels(8)).is_err());
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].contains("psyphy-pixels"));
    assert!(lines[1].contains("unknown request"));
}
