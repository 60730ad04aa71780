//! Every registered kernel, sampled on both sides of the regularization radius.

use ifmm::kernels::{Kernel, KernelKind};

fn main() -> ifmm::Result<()> {
    let a = 1e-3;
    let rs = [0.0, 5e-4, 1e-3, 0.01, 0.1, 0.5, 1.0, 2.0];
    print!("{:>22}", "r");
    for r in rs {
        print!("{r:>12.1e}");
    }
    println!();
    for kind in KernelKind::ALL {
        let k = Kernel::new(kind, a)?;
        print!("{:>22}", kind.id());
        for r in rs {
            print!("{:>12.4e}", k.evaluate(r)?);
        }
        println!();
    }
    Ok(())
}
