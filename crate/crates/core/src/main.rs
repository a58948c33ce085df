use std::sync::atomic::{AtomicBool, Ordering};

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

/// Set the flag on the first ctrl-c; a second one exits at once.
fn watch_ctrl_c() {
    std::thread::spawn(|| {
        let Ok(rt) = tokio::runtime::Builder::new_current_thread().enable_all().build() else { return };
        rt.block_on(async {
            if tokio::signal::ctrl_c().await.is_ok() {
                INTERRUPTED.store(true, Ordering::SeqCst);
                eprintln!("interrupt received; stopping after in-flight work");
            }
            if tokio::signal::ctrl_c().await.is_ok() {
                std::process::exit(tcd_core::cli::EXIT_INTERRUPTED);
            }
        });
    });
}

fn main() {
    let args: Vec<_> = std::env::args_os().collect();
    watch_ctrl_c();
    let code = tcd_core::cli::run(args, &mut std::io::stdout().lock(), Some(&INTERRUPTED));
    std::process::exit(code);
}
