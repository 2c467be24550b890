fn main() {
    // Dense eigendecompositions and matrix products go through the system
    // OpenBLAS (which bundles LAPACK on this layout).
    println!("cargo:rustc-link-search=native=/usr/lib/x86_64-linux-gnu");
    println!("cargo:rustc-link-lib=dylib=openblas");
}
