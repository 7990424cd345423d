//! Compiles and runs the bundled C demo against the generated header and
//! the freshly built static library, proving the ABI from the C side.

use std::path::PathBuf;
use std::process::Command;

#[test]
fn c_demo_compiles_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let include = manifest.join("include");
    let demo = manifest.join("examples_c/demo.c");
    // Workspace target dir (tests run with the library already built).
    let staticlib = manifest.join("../../target/debug/liblyapta_capi.a");
    if !staticlib.exists() {
        eprintln!("skipping: {} not built", staticlib.display());
        return;
    }
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler");
        return;
    }
    let out_dir = std::env::temp_dir().join(format!("lyapta-cdemo-{}", std::process::id()));
    std::fs::create_dir_all(&out_dir).unwrap();
    let exe = out_dir.join("demo");
    let compile = Command::new(&cc)
        .arg(&demo)
        .arg("-I")
        .arg(&include)
        .arg(&staticlib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&exe)
        .output()
        .expect("compiler invocation");
    assert!(
        compile.status.success(),
        "cc failed:\n{}",
        String::from_utf8_lossy(&compile.stderr)
    );
    let run = Command::new(&exe).output().expect("demo runs");
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "demo exit: {:?}\n{stdout}", run.status);
    assert!(stdout.contains("locations: 6"), "{stdout}");
    assert!(stdout.contains("e(2)#1"), "{stdout}");
    assert!(stdout.contains("0 violations"), "{stdout}");
    let _ = std::fs::remove_dir_all(&out_dir);
}
