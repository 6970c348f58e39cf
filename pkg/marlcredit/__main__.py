from marlcredit.cli import main


main()
