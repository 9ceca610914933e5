from wavesource.cli import main

raise SystemExit(main())
