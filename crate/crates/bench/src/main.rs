fn main() {
    // Die quietly when stdout closes early (`blr roofline | head`) instead
    // of panicking on the broken pipe.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let args: Vec<String> = std::env::args().skip(1).collect();
    std::process::exit(blr_bench::cli::run(&args));
}
